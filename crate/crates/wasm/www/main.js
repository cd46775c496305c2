// Expects the wasm-bindgen output (target "web") in ./pkg.
import init, { rateTable, coupledPaths, measureHistogram } from "./pkg/slowfast_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function axes(canvas, xr, yr) {
  const ctx = canvas.getContext("2d");
  const pad = 40, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "11px monospace";
  ctx.fillText(xr[0].toPrecision(3), pad, canvas.height - pad + 14);
  ctx.fillText(xr[1].toPrecision(3), pad + w - 30, canvas.height - pad + 14);
  ctx.fillText(yr[1].toPrecision(3), 2, pad + 4);
  ctx.fillText(yr[0].toPrecision(3), 2, pad + h);
  const sx = (x) => pad + ((x - xr[0]) / (xr[1] - xr[0])) * w;
  const sy = (y) => pad + h - ((y - yr[0]) / (yr[1] - yr[0])) * h;
  return { ctx, sx, sy };
}

function line(p, xs, ys, color, dash = []) {
  const { ctx, sx, sy } = p;
  ctx.strokeStyle = color;
  ctx.setLineDash(dash);
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
}

function range(values) {
  let lo = Math.min(...values), hi = Math.max(...values);
  if (hi === lo) hi = lo + 1;
  return [lo, hi];
}

function guard(out, f) {
  try {
    f();
  } catch (e) {
    $(out).innerHTML = `<p class="err">${e}</p>`;
  }
}

function showRates() {
  guard("r-out", () => {
    const r = JSON.parse(rateTable(num("r-c0"), num("r-beta"), 4, 12, num("r-t")));
    const lx = r.epsilons.map(Math.log2), ly = r.errors.map(Math.log2);
    const fit = r.epsilons.map((e) => (r.intercept + r.fitted_exponent * Math.log(e)) / Math.LN2);
    const p = axes($("r-plot"), range(lx), range(ly.concat(fit)));
    line(p, lx, ly, "#1f77b4");
    line(p, lx, fit, "#d62728", [4, 4]);
    const rows = r.epsilons.map((e, i) => `<tr><td>${e.toExponential(3)}</td><td>${r.errors[i].toExponential(4)}</td></tr>`).join("");
    $("r-out").innerHTML =
      `<p>fitted exponent ${r.fitted_exponent.toFixed(3)}, declared ${r.declared_exponent}` +
      `${r.log_correction ? " (log factor)" : ""}; axes are log₂</p>` +
      `<table><tr><th>ε</th><th>sup error</th></tr>${rows}</table>`;
  });
}

function showPaths() {
  guard("p-out", () => {
    const model = JSON.stringify({ id: "example1", c0: 1, beta: num("p-beta") });
    const r = JSON.parse(coupledPaths(model, num("p-eps"), 1, 100, num("p-n"), BigInt(num("p-seed"))));
    const all = r.coupled.flat().concat(r.averaged.flat());
    const p = axes($("p-plot"), [0, 1], range(all));
    const colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b"];
    r.coupled.forEach((path, i) => {
      line(p, r.times, path, colors[i % colors.length]);
      line(p, r.times, r.averaged[i], colors[i % colors.length], [3, 3]);
    });
    $("p-out").innerHTML = `<p>solid X<sup>ε</sup>, dashed averaged path; ${r.substeps} fast steps per slow step</p>`;
  });
}

function showHistogram() {
  guard("h-out", () => {
    const model = JSON.stringify({ id: "example1", c0: 1, beta: num("h-beta") });
    const r = JSON.parse(measureHistogram(model, 0, num("h-t"), num("h-n"), 40, 7n));
    const mids = r.density.map((_, i) => 0.5 * (r.edges[i] + r.edges[i + 1]));
    const gauss = mids.map((y) => Math.exp(-y * y) / Math.sqrt(Math.PI));
    const p = axes($("h-plot"), [r.edges[0], r.edges[r.edges.length - 1]], [0, Math.max(...r.density, ...gauss) * 1.1]);
    const { ctx, sx, sy } = p;
    ctx.fillStyle = "#9ecae1";
    r.density.forEach((d, i) => ctx.fillRect(sx(r.edges[i]), sy(d), sx(r.edges[i + 1]) - sx(r.edges[i]) - 1, sy(0) - sy(d)));
    line(p, mids, gauss, "#d62728");
    $("h-out").innerHTML = `<p>mean ${r.mean.toFixed(4)}, variance ${r.variance.toFixed(4)} (N(0, ½) in red), burn-in ${r.burn_in.toFixed(1)}</p>`;
  });
}

await init();
$("r-go").onclick = showRates;
$("p-go").onclick = showPaths;
$("h-go").onclick = showHistogram;
showRates();
