/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_reconstruction_free: (a: number, b: number) => void;
export const __wbg_scene_free: (a: number, b: number) => void;
export const reconstruction_date: (a: number) => [number, number];
export const reconstruction_predicted: (a: number) => [number, number];
export const reconstruction_psnr: (a: number) => number;
export const reconstruction_ssim: (a: number) => number;
export const reconstruction_trainRows: (a: number) => number;
export const reconstruction_truth: (a: number) => [number, number];
export const scene_cloudFraction: (a: number, b: number) => [number, number, number];
export const scene_cloudView: (a: number, b: number) => [number, number, number, number];
export const scene_landsat: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_new: (a: number) => number;
export const scene_reconstruct: (a: number, b: number, c: number) => [number, number, number];
export const scene_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
