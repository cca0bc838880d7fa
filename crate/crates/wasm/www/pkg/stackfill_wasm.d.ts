/* tslint:disable */
/* eslint-disable */

/**
 * Outcome of the reconstruction demo.
 */
export class Reconstruction {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    predicted(): Uint8Array;
    truth(): Uint8Array;
    readonly date: string;
    readonly psnr: number;
    readonly ssim: number;
    readonly trainRows: number;
}

/**
 * A seeded synthetic tile.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    cloudFraction(tau: number): number;
    cloudView(tau: number): Uint8Array;
    /**
     * Landsat composite; see [`Scene::try_landsat`].
     */
    landsat(out: number, bilinear: boolean): Uint8Array;
    constructor(seed: number);
    reconstruct(trees: number, depth: number): Reconstruction;
    readonly size: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_reconstruction_free: (a: number, b: number) => void;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly reconstruction_date: (a: number) => [number, number];
    readonly reconstruction_predicted: (a: number) => [number, number];
    readonly reconstruction_psnr: (a: number) => number;
    readonly reconstruction_ssim: (a: number) => number;
    readonly reconstruction_trainRows: (a: number) => number;
    readonly reconstruction_truth: (a: number) => [number, number];
    readonly scene_cloudFraction: (a: number, b: number) => [number, number, number];
    readonly scene_cloudView: (a: number, b: number) => [number, number, number, number];
    readonly scene_landsat: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_new: (a: number) => number;
    readonly scene_reconstruct: (a: number, b: number, c: number) => [number, number, number];
    readonly scene_size: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
