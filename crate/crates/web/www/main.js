import init, { compareCaptions, scoreRanking, minedMargins } from "./pkg/relm_web.js";

const $ = (id) => document.getElementById(id);

function show(id, f) {
  const out = $(id);
  try {
    const value = JSON.parse(f());
    out.classList.remove("error");
    out.textContent = JSON.stringify(value, null, 2);
    return value;
  } catch (e) {
    out.classList.add("error");
    out.textContent = String(e.message ?? e);
    return null;
  }
}

function drawHistogram(h) {
  const box = $("hist");
  box.replaceChildren();
  const max = Math.max(1, ...h.counts);
  h.counts.forEach((c, k) => {
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.height = `${(100 * c) / max}%`;
    bar.title = `[${h.bin_edges[k].toFixed(1)}, ${h.bin_edges[k + 1].toFixed(1)}): ${c}`;
    const label = document.createElement("span");
    label.textContent = h.bin_edges[k].toFixed(1);
    bar.append(label);
    box.append(bar);
  });
}

await init();

$("compare").onclick = () =>
  show("compare-out", () => compareCaptions($("va").value, $("na").value, $("vb").value, $("nb").value));

$("score").onclick = () => show("score-out", () => scoreRanking($("grades").value));

$("mine").onclick = () => {
  const h = show("mine-out", () =>
    minedMargins(
      Number($("items").value),
      Number($("verbs").value),
      Number($("nouns").value),
      Number($("skew").value),
      $("verbdiff").checked,
      BigInt($("seed").value),
    ),
  );
  if (h) drawHistogram(h);
};

$("compare").click();
$("score").click();
