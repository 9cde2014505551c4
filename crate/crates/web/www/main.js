import init, { control_experiment, run_small, count_table } from "./pkg/cvgp_web.js";

const $ = (id) => document.getElementById(id);

function show(el, html) {
  el.innerHTML = html;
}

function fail(el, e) {
  show(el, `<p class="err">${String(e.message ?? e)}</p>`);
}

function table(headers, rows) {
  const head = headers.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${head}</tr>${body}</table>`;
}

const fmt = (x) => (typeof x === "number" ? x.toPrecision(6) : x);

function runExperiment() {
  const values = $("trials").value.trim().split(/\s+/).map(Number);
  try {
    const v = JSON.parse(control_experiment(Float64Array.from(values), 7));
    const rows = v.trials.map((t, i) => [i + 1, t.controlled.join(", "), fmt(t.c1), fmt(t.c2), t.mse.toExponential(2)]);
    show(
      $("exp-out"),
      table(["trial", "x2, x3, x4", "C1", "C2", "MSE"], rows) +
        `<p>${v.frozen ? "Fit confirmed; frozen as" : "Fit not good enough to freeze"} <code>${v.reduced}</code>.
         C1 is <b>${v.statuses[0]}</b>, C2 is <b>${v.statuses[1]}</b>.</p>`
    );
  } catch (e) {
    fail($("exp-out"), e);
  }
}

function runGp() {
  show($("gp-out"), "<p>Running…</p>");
  // let the message paint before the synchronous run blocks the page
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const v = JSON.parse(
        run_small($("truth").value, $("ops").value, $("engine").value, Number($("gens").value), Number($("seed").value))
      );
      const rows = v.stages.map((s) => [s.stage, s.freed.join(" "), fmt(s.best_fitness), s.frozen_members, `<code>${s.best_tree}</code>`]);
      show(
        $("gp-out"),
        table(["stage", "freed", "best fitness", "frozen", "best"], rows) +
          `<p>Best: <code>${v.best}</code> (${v.nodes} nodes), held-out NMSE ${v.test_nmse.toExponential(3)},
           ${((performance.now() - t0) / 1000).toFixed(1)} s.</p>`
      );
    } catch (e) {
      fail($("gp-out"), e);
    }
  }, 20);
}

function runCount() {
  try {
    const rows = JSON.parse(count_table(Number($("lmax").value), Number($("m").value), Number($("o").value)));
    show($("count-out"), table(["l", "A(l)", "S(l)", "log10 S"], rows.map((r) => [r.l, r.a, r.s, r.log10_s.toFixed(2)])));
  } catch (e) {
    fail($("count-out"), e);
  }
}

init().then(() => {
  $("status").textContent = "Ready.";
  $("run-exp").onclick = runExperiment;
  $("run-gp").onclick = runGp;
  $("run-count").onclick = runCount;
  runExperiment();
  runCount();
});
