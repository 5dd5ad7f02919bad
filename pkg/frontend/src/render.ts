/** Pure HTML-string views. No DOM dependency: every function returns markup
 * as a string so the views are testable without a browser environment. */

import type {
  ArgValue,
  SelectionJson,
  TraceJson,
  TurnJson,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function formatProbability(selection: SelectionJson | null): string {
  if (selection === null || selection.probability === null) {
    return "";
  }
  return `${(selection.probability * 100).toFixed(1)}%`;
}

export function formatDuration(seconds: number): string {
  if (seconds >= 1) {
    return `${seconds.toFixed(2)}s`;
  }
  return `${(seconds * 1000).toFixed(1)}ms`;
}

export function renderFailureBanner(trace: TraceJson): string {
  if (trace.failing_stage === null) {
    return "";
  }
  const kind = escapeHtml(trace.error_kind ?? "error");
  return (
    `<div class="failure-banner failure-${kind}">` +
    `request failed at <strong>${escapeHtml(trace.failing_stage)}</strong>: ` +
    `${escapeHtml(trace.error ?? "unknown error")}</div>`
  );
}

export function renderArgsTable(
  args: Record<string, ArgValue>,
  fallback: boolean,
): string {
  const rows = Object.entries(args)
    .map(
      ([key, value]) =>
        `<tr><th>${escapeHtml(key)}</th>` +
        `<td>${escapeHtml(String(value))}</td></tr>`,
    )
    .join("");
  const badge = fallback
    ? '<span class="badge badge-fallback">defaults used</span>'
    : "";
  return (
    `<div class="args">${badge}` +
    `<table class="args-table"><tbody>${rows}</tbody></table></div>`
  );
}

export function renderDurations(durations: Record<string, number>): string {
  const parts = Object.entries(durations).map(
    ([stage, seconds]) =>
      `<span class="duration">${escapeHtml(stage)} ` +
      `${formatDuration(seconds)}</span>`,
  );
  return `<div class="durations">${parts.join(" ")}</div>`;
}

export function renderHistory(turns: TurnJson[]): string {
  const items = turns.map(
    (turn) =>
      `<div class="turn turn-${escapeHtml(turn.role)}">` +
      `${escapeHtml(turn.text)}</div>`,
  );
  return `<div class="history">${items.join("")}</div>`;
}

/**
 * One pipeline run as a card: failure banner (if any), the rewritten
 * prompt, the selected model with its token probability, the argument
 * table with a fallback badge, and per-stage durations. `modelNames`
 * maps model ids to display names (from the /v1/models listing).
 */
export function renderTraceCard(
  trace: TraceJson,
  modelNames: Record<string, string> = {},
): string {
  const pieces: string[] = [
    `<article class="trace-card" data-trace-id="${escapeHtml(trace.trace_id)}">`,
  ];
  pieces.push(renderFailureBanner(trace));
  if (trace.rewritten_prompt !== null) {
    pieces.push(
      `<p class="rewritten-prompt">${escapeHtml(trace.rewritten_prompt)}</p>`,
    );
  }
  if (trace.selection !== null) {
    const name = modelNames[trace.selection.model_id] ?? trace.selection.model_id;
    const probability = formatProbability(trace.selection);
    const probabilityHtml = probability
      ? ` <span class="probability">${probability}</span>`
      : "";
    const noModel = trace.selection.no_model
      ? ' <span class="badge badge-no-model">no model</span>'
      : "";
    pieces.push(
      `<p class="model">${escapeHtml(name)}${probabilityHtml}${noModel}</p>`,
    );
  }
  if (trace.args !== null) {
    pieces.push(renderArgsTable(trace.args, trace.arg_fallback));
  }
  pieces.push(renderDurations(trace.durations));
  pieces.push("</article>");
  return pieces.join("");
}
