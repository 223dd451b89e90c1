// Pure HTML renderers: plain functions from wire payloads to markup strings,
// so everything visual is testable without a browser.

import type { QueueItemView, StatusView } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

type TokenRole = "head" | "tail" | "other";

/** Token-level mention roles: subject vs object stand out, bystanders are neutral. */
function mentionRoles(item: QueueItemView): Map<string, TokenRole> {
  const roles = new Map<string, TokenRole>();
  item.document.vertexSet.forEach((mentions, entityIdx) => {
    const role: TokenRole =
      entityIdx === item.h_idx ? "head" : entityIdx === item.t_idx ? "tail" : "other";
    for (const mention of mentions) {
      for (let tok = mention.pos[0]; tok < mention.pos[1]; tok++) {
        const key = `${mention.sent_id}:${tok}`;
        // head/tail win over an overlapping bystander mention
        if (role !== "other" || !roles.has(key)) {
          roles.set(key, role);
        }
      }
    }
  });
  return roles;
}

export function renderSentences(item: QueueItemView): string {
  const roles = mentionRoles(item);
  const sentences = item.document.sents.map((tokens, sentIdx) => {
    const rendered = tokens.map((token, tokIdx) => {
      const role = roles.get(`${sentIdx}:${tokIdx}`);
      const text = escapeHtml(token);
      return role ? `<span class="mention ${role}">${text}</span>` : text;
    });
    return `<p class="sentence" data-sent="${sentIdx}">${rendered.join(" ")}</p>`;
  });
  return `<div class="document">${sentences.join("\n")}</div>`;
}

/** Relation ids hinted by at least one model, with how many back each. */
export function hintCounts(item: QueueItemView): Map<string, number> {
  const counts = new Map<string, number>();
  for (const predicted of Object.values(item.predictions)) {
    for (const rel of predicted) {
      counts.set(rel, (counts.get(rel) ?? 0) + 1);
    }
  }
  return counts;
}

export function visibleRelations(item: QueueItemView, filter: string): string[] {
  const needle = filter.trim().toLowerCase();
  return item.relations
    .filter(
      (r) =>
        !needle ||
        r.id.toLowerCase().includes(needle) ||
        r.display.toLowerCase().includes(needle),
    )
    .map((r) => r.id);
}

export function renderRelationPicker(
  item: QueueItemView,
  selected: ReadonlySet<string>,
  filter: string,
): string {
  const hints = hintCounts(item);
  const visible = new Set(visibleRelations(item, filter));
  const rows = item.relations
    .filter((r) => visible.has(r.id))
    .map((r, index) => {
      const classes = ["relation"];
      if (selected.has(r.id)) classes.push("selected");
      if (hints.has(r.id)) classes.push("hinted");
      if (r.long_tail) classes.push("long-tail");
      const badge = r.long_tail ? '<span class="badge">long tail</span>' : "";
      const hint = hints.has(r.id)
        ? `<span class="hint">${hints.get(r.id)} model${hints.get(r.id)! > 1 ? "s" : ""}</span>`
        : "";
      const shortcut = index < 9 ? `<kbd>${index + 1}</kbd>` : "";
      return (
        `<li class="${classes.join(" ")}" data-rel="${escapeHtml(r.id)}">` +
        `${shortcut}<span class="rel-name">${escapeHtml(r.display)}</span>${badge}${hint}</li>`
      );
    });
  return `<ul class="relations">${rows.join("\n")}</ul>`;
}

export function renderProgress(status: StatusView): string {
  const stats = status.round_stats.totals;
  const rows = Object.entries(status.round_stats.per_iteration)
    .sort(([a], [b]) => Number(a) - Number(b))
    .map(
      ([iteration, s]) =>
        `<tr><td>${iteration}</td><td>${s.long_tail}</td><td>${s.frequent}</td><td>${s.na}</td></tr>`,
    )
    .join("");
  return (
    `<div class="progress">` +
    `<span class="iteration">iteration ${status.iteration}</span>` +
    `<span class="budget">budget ${status.budget_used}/${status.budget}</span>` +
    `<span class="disagreement">mean disagreement ${status.mean_disagreement.toExponential(3)}</span>` +
    `<span class="queue">${status.queue.pending} pending</span>` +
    `<table class="rounds"><thead><tr><th>iter</th><th>long tail</th><th>frequent</th><th>n/a</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<span class="totals">totals: ${stats.long_tail} long tail / ${stats.frequent} frequent / ${stats.na} n/a</span>` +
    `</div>`
  );
}

export function renderItem(
  item: QueueItemView,
  selected: ReadonlySet<string>,
  filter: string,
): string {
  const pair = `${escapeHtml(item.title)} (${item.h_idx} → ${item.t_idx})`;
  return (
    `<section class="item">` +
    `<header><h2>${pair}</h2>` +
    `<span class="score">disagreement ${item.score.toFixed(4)}</span></header>` +
    renderSentences(item) +
    `<input class="filter" placeholder="filter relations (/)" value="${escapeHtml(filter)}">` +
    renderRelationPicker(item, selected, filter) +
    `<footer class="actions">` +
    `<button data-action="submit">submit (enter)</button>` +
    `<button data-action="na">no relation (n)</button>` +
    `<button data-action="hints">take hints (h)</button>` +
    `</footer></section>`
  );
}

export function renderTerminal(status: StatusView): string {
  const labels = status.dds_labels ?? 0;
  return (
    `<section class="terminal"><h2>aggregation complete</h2>` +
    `<p>stopped: ${escapeHtml(status.stop_reason ?? "done")} after iteration ${status.iteration}.</p>` +
    `<p class="dds-summary">${labels} labels retained in the denoised dataset.</p>` +
    renderProgress(status) +
    `</section>`
  );
}

export function renderAdvancePrompt(status: StatusView): string {
  return (
    `<section class="advance"><h2>batch complete</h2>` +
    `<p>all sampled pairs are annotated.</p>` +
    `<button data-action="advance">advance iteration</button>` +
    renderProgress(status) +
    `</section>`
  );
}

export interface ViewState {
  phase: "loading" | "annotating" | "ready_to_advance" | "terminal" | "training";
  item: QueueItemView | null;
  status: StatusView | null;
  selected: ReadonlySet<string>;
  filter: string;
  banner: string | null;
}

export function renderApp(view: ViewState): string {
  const banner = view.banner ? `<div class="banner">${escapeHtml(view.banner)}</div>` : "";
  const progress = view.status ? renderProgress(view.status) : "";
  switch (view.phase) {
    case "loading":
      return `${banner}<p class="loading">loading…</p>`;
    case "training":
      return `${banner}<p class="training">training in progress…</p>${progress}`;
    case "terminal":
      return `${banner}${renderTerminal(view.status!)}`;
    case "ready_to_advance":
      return `${banner}${renderAdvancePrompt(view.status!)}`;
    case "annotating":
      return `${banner}${renderItem(view.item!, view.selected, view.filter)}${progress}`;
  }
}
