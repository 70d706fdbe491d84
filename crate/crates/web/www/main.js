import init, { PhantomView, TrainerView, bland_altman_report } from "./pkg/tractseg_web.js";

const $ = (id) => document.getElementById(id);
let phantom = null;
let trainer = null;

function status(text) {
  $("status").textContent = text;
}

function sliceShape() {
  const d = phantom.dims();
  const axis = Number($("axis").value);
  const rest = [0, 1, 2].filter((a) => a !== axis);
  return { axis, w: d[rest[0]], h: d[rest[1]], depth: d[axis] };
}

function paint(canvas, values, w, h, color, outline) {
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(w, h);
  for (let j = 0; j < h; j++) {
    for (let i = 0; i < w; i++) {
      const k = j * w + i;
      const v = Math.max(0, Math.min(1, values[k]));
      const o = (h - 1 - j) * w + i;
      const [r, g, b] = color(v);
      img.data.set([r, g, b, 255], o * 4);
      if (outline && outline[k] > 0.5) {
        const edge = [[1, 0], [-1, 0], [0, 1], [0, -1]].some(([di, dj]) => {
          const ii = i + di, jj = j + dj;
          return ii < 0 || jj < 0 || ii >= w || jj >= h || outline[jj * w + ii] < 0.5;
        });
        if (edge) img.data.set([230, 40, 40, 255], o * 4);
      }
    }
  }
  const tmp = document.createElement("canvas");
  tmp.width = w;
  tmp.height = h;
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

const gray = (v) => [v * 255, v * 255, v * 255];
const heat = (v) => [v * 255, v * 180, 60 + v * 40];

function redraw() {
  if (!phantom) return;
  const { axis, w, h, depth } = sliceShape();
  const slider = $("slice");
  slider.max = depth - 1;
  const index = Math.min(Number(slider.value), depth - 1);
  const truth = phantom.truth_slice(axis, index);
  paint($("fa"), phantom.fa_slice(axis, index), w, h, gray, truth);
  if (trainer) {
    paint($("prob"), trainer.probability_slice(axis, index), w, h, heat, truth);
  } else {
    $("prob").getContext("2d").clearRect(0, 0, 256, 256);
  }
}

function drawCurve(losses) {
  const c = $("curve");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(0.5, 0.5, c.width - 1, c.height - 1);
  if (losses.length < 2) return;
  const lo = Math.min(...losses), hi = Math.max(...losses);
  const span = hi - lo || 1;
  ctx.strokeStyle = "#1f5f99";
  ctx.beginPath();
  losses.forEach((l, i) => {
    const x = 5 + (i / (losses.length - 1)) * (c.width - 10);
    const y = 5 + ((hi - l) / span) * (c.height - 10);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
}

function generate() {
  status("Generating phantom and fitting tensors...");
  setTimeout(() => {
    try {
      phantom = new PhantomView(Number($("radius").value), Number($("sagitta").value), Number($("sigma").value), Number($("seed").value));
      trainer = null;
      $("phantom-info").textContent = `${phantom.tract_voxels()} tract voxels`;
      $("train-info").textContent = "";
      drawCurve([]);
      redraw();
      status("Ready.");
    } catch (e) {
      status(`Error: ${e.message ?? e}`);
    }
  }, 0);
}

function resetNetwork() {
  trainer = new TrainerView(phantom, $("arch").value, Number($("weight").value), Number($("lr").value), 0);
}

async function trainSteps() {
  if (!phantom) return;
  try {
    if (!trainer) resetNetwork();
    for (let i = 0; i < 20; i++) {
      const loss = trainer.step();
      status(`step ${trainer.losses().length}: loss ${loss.toFixed(4)}`);
      await new Promise((r) => setTimeout(r, 0));
    }
    const losses = trainer.losses();
    drawCurve(losses);
    $("train-info").textContent = `steps ${losses.length}\nloss ${losses[losses.length - 1].toFixed(4)}\nDice ${trainer.dice().toFixed(3)}`;
    redraw();
  } catch (e) {
    status(`Error: ${e.message ?? e}`);
  }
}

function agreement() {
  try {
    const r = JSON.parse(bland_altman_report($("scan").value, $("rescan").value, "measure", "units"));
    $("plot").innerHTML = r.svg.replace(/^<\?xml[^>]*>\s*/, "");
    $("agree-info").textContent = `n=${r.n}, mean difference ${r.mean_diff.toPrecision(4)}, limits of agreement [${r.lower.toPrecision(4)}, ${r.upper.toPrecision(4)}]`;
  } catch (e) {
    $("agree-info").textContent = `Error: ${e.message ?? e}`;
  }
}

await init();
$("generate").onclick = generate;
$("axis").onchange = redraw;
$("slice").oninput = redraw;
$("train").onclick = trainSteps;
$("reset").onclick = () => { if (phantom) { resetNetwork(); drawCurve([]); redraw(); } };
$("agree").onclick = agreement;
generate();
agreement();
