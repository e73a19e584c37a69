import init, { Viewer } from "./pkg/splat7d_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

await init();
const viewer = new Viewer(60, 7n);
$("index").max = viewer.len() - 1;

const frame = $("frame");
const frameCtx = frame.getContext("2d");
const curve = $("curve");
const curveCtx = curve.getContext("2d");

function show(fn) {
  try {
    fn();
    $("status").textContent = "";
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function drawFrame() {
  const px = viewer.render(num("time"), num("azimuth"), num("elevation"), frame.width, frame.height);
  frameCtx.putImageData(new ImageData(new Uint8ClampedArray(px), frame.width, frame.height), 0, 0);
}

function drawCurve() {
  const samples = 121;
  const rows = viewer.modulationCurve(Number($("index").value), num("azimuth"), samples);
  const { width: w, height: h } = curve;
  curveCtx.clearRect(0, 0, w, h);
  const series = [[1, "#1f77b4"], [2, "#ff7f0e"], [3, "#888"]];
  for (const [col, color] of series) {
    curveCtx.strokeStyle = color;
    curveCtx.beginPath();
    for (let i = 0; i < samples; i++) {
      const x = rows[4 * i] * (w - 1);
      const y = (1 - rows[4 * i + col]) * (h - 1);
      i === 0 ? curveCtx.moveTo(x, y) : curveCtx.lineTo(x, y);
    }
    curveCtx.stroke();
  }
  curveCtx.strokeStyle = "#d00";
  const x = num("time") * (w - 1);
  curveCtx.beginPath();
  curveCtx.moveTo(x, 0);
  curveCtx.lineTo(x, h);
  curveCtx.stroke();
}

function refresh() {
  for (const id of ["time", "azimuth", "elevation", "lambda-t", "lambda-d"]) {
    $(id + "-v").textContent = $(id).value;
  }
  show(() => {
    viewer.setSharpness(num("lambda-t"), num("lambda-d"));
    drawFrame();
    drawCurve();
  });
}

for (const el of document.querySelectorAll("input")) {
  el.addEventListener("input", refresh);
}
refresh();
