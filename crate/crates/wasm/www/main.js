import init, { Scene } from "./pkg/stackfill_wasm.js";

const $ = (id) => document.getElementById(id);
let scene;

function paint(id, rgba) {
  const canvas = $(id);
  const data = new ImageData(new Uint8ClampedArray(rgba), canvas.width, canvas.height);
  canvas.getContext("2d").putImageData(data, 0, 0);
}

function guard(f) {
  try {
    $("status").textContent = "";
    f();
  } catch (e) {
    $("status").textContent = e.message ?? String(e);
  }
}

function drawLandsat() {
  paint("nearest", scene.landsat(scene.size, false));
  paint("bilinear", scene.landsat(scene.size, true));
}

function drawCloud() {
  const tau = Number($("tau").value);
  $("tauv").textContent = tau.toFixed(2);
  paint("cloud", scene.cloudView(tau));
  $("frac").textContent = (100 * scene.cloudFraction(tau)).toFixed(1) + "%";
}

function fit() {
  $("score").textContent = "fitting…";
  // let the label render before the blocking fit
  setTimeout(() => guard(() => {
    const t0 = performance.now();
    const r = scene.reconstruct(Number($("trees").value), Number($("depth").value));
    paint("truth", r.truth());
    paint("pred", r.predicted());
    $("score").textContent =
      `${r.date}: PSNR ${r.psnr.toFixed(2)} dB, SSIM ${r.ssim.toFixed(3)}, ` +
      `${r.trainRows} training pixels, ${(performance.now() - t0).toFixed(0)} ms`;
    r.free();
  }), 0);
}

function load() {
  guard(() => {
    scene?.free();
    scene = new Scene(Number($("seed").value) >>> 0);
    drawLandsat();
    drawCloud();
    $("score").textContent = "";
  });
}

await init();
$("seed").addEventListener("change", load);
$("tau").addEventListener("input", () => guard(drawCloud));
$("fit").addEventListener("click", fit);
load();
