// HTML renderers.  All pure string -> string so they can be tested without a
// DOM; main.ts assigns the output to innerHTML.

import type { RecommendationDocument, ValueRow } from "./api.js";
import { offendingField } from "./api.js";
import type { FormState } from "./form.js";
import { isComplete } from "./form.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// Numbers arrive as JSON values; String() keeps the exact parsed
// representation, so the page shows what the service sent.  No rounding,
// no toFixed.
export function showNumber(value: number): string {
  return String(value);
}

const REGIME_TITLES: Record<string, string> = {
  observed: "current practice",
  optimal_L: "covariate-only rule",
  superoptimal_LA: "intent-aware rule",
  superoptimal_LAZ: "intent- and instrument-aware rule",
};

export interface InstructionCopy {
  headline: string;
  detail: string;
  caution?: string;
}

// Plain-language wording for the three instruction classes.  The class is
// also rendered as text (never as colour alone).
export function instructionCopy(instruction: string): InstructionCopy {
  switch (instruction) {
    case "follow":
      return {
        headline: "Follow the covariate-only recommendation.",
        detail: "In this context the advice does not depend on the intended treatment.",
      };
    case "keep_intent":
      return {
        headline: "Keep the intended treatment.",
        detail: "In this context the best action is whichever treatment was already intended.",
      };
    case "flip_intent":
      return {
        headline: "Do the opposite of the intended treatment.",
        detail: "In this context the best action reverses the intended treatment.",
        caution:
          "Caution: opposite-of-intention advice is an unusual finding; " +
          "have it reviewed before acting on it.",
      };
    default:
      return { headline: `Instruction: ${instruction}`, detail: "" };
  }
}

//----------------------------------------------------------------------
// form
//----------------------------------------------------------------------

export function renderForm(form: FormState): string {
  const rows: string[] = [];
  for (const name of form.meta.covariates) {
    const options = ['<option value="">choose…</option>'];
    for (const level of form.meta.levels[name] ?? []) {
      const raw = String(level);
      const chosen = form.values[name];
      const selected = chosen !== null && String(chosen) === raw ? " selected" : "";
      options.push(`<option value="${escapeHtml(raw)}"${selected}>${escapeHtml(raw)}</option>`);
    }
    rows.push(
      `<label class="field">${escapeHtml(name)}` +
        `<select data-covariate="${escapeHtml(name)}">${options.join("")}</select></label>`,
    );
  }

  const intentChoices: Array<[string, string]> = [
    ["undisclosed", "not disclosed"],
    ["0", "intends action 0"],
    ["1", "intends action 1"],
  ];
  const intentOptions = intentChoices
    .map(
      ([value, label]) =>
        `<option value="${value}"${form.intent === value ? " selected" : ""}>${label}</option>`,
    )
    .join("");
  rows.push(
    `<label class="field">intended treatment` +
      `<select data-role="intent">${intentOptions}</select></label>`,
  );

  if (form.meta.has_instrument) {
    const zChoices: Array<[string, string]> = [
      ["unset", "not recorded"],
      ["0", "0"],
      ["1", "1"],
    ];
    const zOptions = zChoices
      .map(
        ([value, label]) =>
          `<option value="${value}"${form.instrument === value ? " selected" : ""}>${label}</option>`,
      )
      .join("");
    rows.push(
      `<label class="field">instrument` +
        `<select data-role="instrument">${zOptions}</select></label>`,
    );
  }

  const disabled = isComplete(form) ? "" : " disabled";
  rows.push(`<button type="button" data-role="submit"${disabled}>get recommendation</button>`);
  return rows.join("\n");
}

//----------------------------------------------------------------------
// results
//----------------------------------------------------------------------

function valueTable(rows: Record<string, ValueRow>): string {
  const body: string[] = [];
  for (const [label, row] of Object.entries(rows)) {
    const title = REGIME_TITLES[label] ?? label;
    body.push(
      `<tr><th scope="row">${escapeHtml(title)}</th><td>${showNumber(row.point)}</td>` +
        `<td>[${showNumber(row.ci_lo)}, ${showNumber(row.ci_hi)}]</td></tr>`,
    );
  }
  return (
    '<table class="values"><caption>estimated regime values</caption>' +
    "<thead><tr><th>regime</th><th>estimate</th><th>95% CI</th></tr></thead>" +
    `<tbody>${body.join("")}</tbody></table>`
  );
}

export function renderRecommendation(doc: RecommendationDocument): string {
  const parts: string[] = [];

  if (doc.intent === undefined) {
    // Intent not disclosed: show both branches side by side, so the advice
    // is available before anyone states what they meant to do.
    const branches: string[] = [];
    for (const intent of ["0", "1"]) {
      const lines = [
        `<p class="action">recommended action: <strong>${doc.g_sup_by_intent[intent]}</strong></p>`,
      ];
      if (doc.g_zsup_by_intent !== undefined) {
        lines.push(
          `<p class="action">with instrument ${doc.instrument}: ` +
            `<strong>${doc.g_zsup_by_intent[intent]}</strong></p>`,
        );
      }
      branches.push(
        `<article class="branch"><h3>if the intended treatment is ${intent}</h3>` +
          `${lines.join("")}</article>`,
      );
    }
    parts.push(
      `<section class="branches" aria-label="recommendation by intent">${branches.join("")}</section>`,
    );
  } else {
    parts.push('<section class="resolved">');
    parts.push(`<h3>stated intent: ${doc.intent}</h3>`);
    parts.push(`<p class="action">recommended action: <strong>${doc.g_sup}</strong></p>`);
    if (doc.g_zsup !== undefined) {
      parts.push(
        `<p class="action">with instrument ${doc.instrument}: <strong>${doc.g_zsup}</strong></p>`,
      );
    }
    parts.push("</section>");
  }

  parts.push(`<p class="gopt">covariate-only recommendation: ${doc.g_opt}</p>`);

  const copy = instructionCopy(doc.instruction);
  parts.push(
    '<section class="instruction">' +
      `<p class="instruction-label">instruction class: ${escapeHtml(doc.instruction)}</p>` +
      `<p><strong>${escapeHtml(copy.headline)}</strong></p>` +
      `<p>${escapeHtml(copy.detail)}</p>` +
      (copy.caution === undefined ? "" : `<p class="caution">${escapeHtml(copy.caution)}</p>`) +
      "</section>",
  );

  parts.push(valueTable(doc.value_estimates));
  return parts.join("\n");
}

//----------------------------------------------------------------------
// errors
//----------------------------------------------------------------------

export function renderError(status: number, message: string, fields: string[]): string {
  const field = offendingField(message, fields);
  const highlight =
    field === null
      ? ""
      : `<p class="error-field">check the <strong>${escapeHtml(field)}</strong> input</p>`;
  return (
    `<div class="error" role="alert"><p>request failed (${status}): ` +
    `${escapeHtml(message)}</p>${highlight}</div>`
  );
}

export function renderRetryBanner(base: string, message: string): string {
  return (
    `<div class="banner" role="alert"><p>cannot reach the consultation service at ` +
    `${escapeHtml(base)}: ${escapeHtml(message)}</p>` +
    '<button type="button" data-role="retry">retry</button></div>'
  );
}
