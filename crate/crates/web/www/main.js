import init, { compare_lidar_schemes, drift_curves, estimate_gyro_offset } from "./pkg/gpsmimic_web.js";

const COLORS = { arrival: "#c0392b", internal: "#2471a3", pps_disciplined: "#1e8449" };

function prepare(canvas) {
  const dpr = window.devicePixelRatio || 1;
  canvas.width = canvas.clientWidth * dpr;
  canvas.height = canvas.clientHeight * dpr;
  const ctx = canvas.getContext("2d");
  ctx.scale(dpr, dpr);
  ctx.clearRect(0, 0, canvas.clientWidth, canvas.clientHeight);
  ctx.font = "11px system-ui, sans-serif";
  return { ctx, w: canvas.clientWidth, h: canvas.clientHeight };
}

const PAD = { l: 46, r: 10, t: 18, b: 22 };

function axes(ctx, w, h, x0, x1, y0, y1, xlabel, title) {
  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.strokeRect(PAD.l, PAD.t, w - PAD.l - PAD.r, h - PAD.t - PAD.b);
  ctx.textAlign = "left";
  ctx.fillText(title, PAD.l, 12);
  ctx.fillText(fmt(x0), PAD.l, h - 6);
  ctx.textAlign = "right";
  ctx.fillText(`${fmt(x1)} ${xlabel}`, w - PAD.r, h - 6);
  ctx.fillText(fmt(y1), PAD.l - 4, PAD.t + 9);
  ctx.fillText(fmt(y0), PAD.l - 4, h - PAD.b);
  const sx = (x) => PAD.l + ((x - x0) / (x1 - x0 || 1)) * (w - PAD.l - PAD.r);
  const sy = (y) => h - PAD.b - ((y - y0) / (y1 - y0 || 1)) * (h - PAD.t - PAD.b);
  return { sx, sy };
}

function fmt(v) {
  const a = Math.abs(v);
  return a >= 1000 || a === 0 ? v.toFixed(0) : a >= 10 ? v.toFixed(1) : v.toPrecision(3);
}

function line(ctx, sx, sy, xs, ys, color) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function histogram(canvas, s) {
  const { ctx, w, h } = prepare(canvas);
  const n = s.hist.counts.length;
  const x0 = s.hist.lo_us;
  const x1 = x0 + n * s.hist.bin_us;
  const ymax = Math.max(1, ...s.hist.counts);
  const { sx, sy } = axes(ctx, w, h, x0, x1, 0, ymax, "µs", `${s.scheme} periods`);
  ctx.fillStyle = COLORS[s.scheme] || "#555";
  s.hist.counts.forEach((c, i) => {
    const a = sx(x0 + i * s.hist.bin_us);
    const b = sx(x0 + (i + 1) * s.hist.bin_us);
    ctx.fillRect(a, sy(c), Math.max(1, b - a - 0.5), sy(0) - sy(c));
  });
  if (s.hist.above + s.hist.below > 0) {
    ctx.fillStyle = "#444";
    ctx.textAlign = "right";
    ctx.fillText(`${s.hist.above + s.hist.below} outside`, w - PAD.r - 4, PAD.t + 12);
  }
}

function run(section, f) {
  const form = section.querySelector("form");
  const out = section.querySelector(".out");
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const v = Object.fromEntries([...new FormData(form)].map(([k, x]) => [k, Number(x)]));
    out.className = "out";
    out.textContent = "running...";
    setTimeout(() => {
      try {
        f(v, out);
      } catch (e) {
        out.className = "out err";
        out.textContent = `error: ${e.message || e}`;
      }
    }, 10);
  });
  form.requestSubmit();
}

function schemes(v, out) {
  const r = JSON.parse(compare_lidar_schemes(v.duration, v.seed, v.sigma, v.spike));
  const rows = r.schemes
    .map((s) => `<tr><td>${s.scheme}</td><td>${s.periods}</td><td>${s.mean_us.toFixed(3)}</td><td>${s.std_us.toFixed(3)}</td><td>${s.min_us.toFixed(3)}</td><td>${s.max_us.toFixed(3)}</td></tr>`)
    .join("");
  out.innerHTML = `${r.packets} packets, ${r.spikes} delay spikes<table><tr><th>scheme</th><th>periods</th><th>mean µs</th><th>STD µs</th><th>min µs</th><th>max µs</th></tr>${rows}</table>`;
  const canvases = document.querySelectorAll("#schemes .hists canvas");
  r.schemes.forEach((s, i) => canvases[i] && histogram(canvases[i], s));
}

function drift(v, out) {
  const r = JSON.parse(drift_curves(v.ppm, v.duration));
  out.textContent = `max |disciplined error| ${r.max_abs_disciplined_us.toFixed(1)} µs; free-running error at end ${(r.final_internal_us / 1000).toFixed(3)} ms`;
  const { ctx, w, h } = prepare(document.querySelector("#drift canvas"));
  const all = r.internal_us.concat(r.disciplined_us);
  const { sx, sy } = axes(ctx, w, h, 0, r.t_s[r.t_s.length - 1] || 1, Math.min(0, ...all), Math.max(0, ...all), "s", "timestamp error (µs): free-running (blue), disciplined (green)");
  line(ctx, sx, sy, r.t_s, r.internal_us, COLORS.internal);
  line(ctx, sx, sy, r.t_s, r.disciplined_us, COLORS.pps_disciplined);
}

function offset(v, out) {
  const r = JSON.parse(estimate_gyro_offset(v.offset, v.noise, v.duration, v.seed));
  out.textContent = `estimate ${r.estimate_ms.toFixed(3)} ms (error ${r.error_us.toFixed(1)} µs), confidence ${r.confidence.toFixed(2)}${r.low_confidence ? " LOW" : ""}`;
  const { ctx, w, h } = prepare(document.querySelector("#offset canvas"));
  const xs = r.curve_offset_ms;
  const { sx, sy } = axes(ctx, w, h, xs[0], xs[xs.length - 1], Math.min(0, ...r.curve_r), 1, "ms", "normalized cross-correlation vs candidate offset");
  line(ctx, sx, sy, xs, r.curve_r, "#6c3483");
  ctx.strokeStyle = "#c0392b";
  ctx.setLineDash([4, 3]);
  ctx.beginPath();
  ctx.moveTo(sx(r.estimate_ms), PAD.t);
  ctx.lineTo(sx(r.estimate_ms), h - PAD.b);
  ctx.stroke();
  ctx.setLineDash([]);
}

await init();
run(document.getElementById("schemes"), schemes);
run(document.getElementById("drift"), drift);
run(document.getElementById("offset"), offset);
