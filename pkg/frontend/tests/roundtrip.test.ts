// Round-trip checks against responses captured from the live service: every
// number and action the page shows must come verbatim from a service
// response, and the form must reproduce the exact request that produced it.

import { describe, expect, it } from "vitest";

import type { MetaDocument, RecommendationDocument } from "../src/api.js";
import {
  emptyForm,
  isComplete,
  levelFromOption,
  requestBody,
  setCovariate,
  setInstrument,
  setIntent,
} from "../src/form.js";
import { renderError, renderForm, renderRecommendation, showNumber } from "../src/view.js";
import { body, errorMessage, loadCapture } from "./fixtures.js";

const INTENT_TAGS = ["u", "0", "1"] as const;
const Z_TAGS = ["u", "0", "1"] as const;

function expectVerbatimNumbers(html: string, raw: string, doc: RecommendationDocument): void {
  for (const row of Object.values(doc.value_estimates)) {
    for (const value of [row.point, row.ci_lo, row.ci_hi]) {
      const shown = showNumber(value);
      // the page shows it, and it is literally a substring of the wire bytes
      expect(html).toContain(shown);
      expect(raw).toContain(shown);
    }
  }
}

describe("recommendation round trip (worked example with an instrument)", () => {
  for (const iTag of INTENT_TAGS) {
    for (const zTag of Z_TAGS) {
      it(`renders the captured response for intent=${iTag}, instrument=${zTag}`, () => {
        const capture = loadCapture(`ex3_recommend_intent-${iTag}_z-${zTag}`);
        expect(capture.status).toBe(200);
        const doc = body<RecommendationDocument>(capture);
        const html = renderRecommendation(doc);

        if (iTag === "u") {
          // undisclosed intent: both branches shown side by side
          expect(html.match(/<article class="branch">/g)).toHaveLength(2);
          for (const intent of ["0", "1"]) {
            expect(html).toContain(`if the intended treatment is ${intent}`);
            expect(html).toContain(
              `recommended action: <strong>${doc.g_sup_by_intent[intent]}</strong>`,
            );
          }
          if (zTag !== "u") {
            expect(doc.g_zsup_by_intent).toBeDefined();
            for (const intent of ["0", "1"]) {
              expect(html).toContain(
                `with instrument ${doc.instrument}: <strong>${doc.g_zsup_by_intent![intent]}</strong>`,
              );
            }
          }
        } else {
          expect(html).toContain(`stated intent: ${doc.intent}`);
          expect(html).toContain(`recommended action: <strong>${doc.g_sup}</strong>`);
          if (zTag !== "u") {
            expect(html).toContain(
              `with instrument ${doc.instrument}: <strong>${doc.g_zsup}</strong>`,
            );
          }
        }

        expect(html).toContain(`covariate-only recommendation: ${doc.g_opt}`);
        expect(html).toContain(`instruction class: ${doc.instruction}`);
        expectVerbatimNumbers(html, capture.raw, doc);
      });
    }
  }

  it("shows the opposite-of-intention case with its caution note", () => {
    // In this law the covariate-free rule picks 1 but a disclosed intent of 1
    // flips the advice to 0 — the strongest divergence the page can show.
    const doc = body<RecommendationDocument>(loadCapture("ex3_recommend_intent-1_z-1"));
    expect(doc.g_opt).toBe(1);
    expect(doc.g_sup).toBe(0);
    expect(doc.g_zsup).toBe(0);
    expect(doc.gamma).toBe(2);
    expect(doc.instruction).toBe("flip_intent");

    const html = renderRecommendation(doc);
    expect(html).toContain("Do the opposite of the intended treatment.");
    expect(html).toContain('class="caution"');
    expect(html).toContain("unusual finding");
  });
});

describe("form round trip (synthetic registry schema)", () => {
  it("builds the form from the schema and gates submit until complete", () => {
    const meta = body<MetaDocument>(loadCapture("icu_meta"));
    expect(meta.covariates).toEqual(["severe", "resp_support", "elderly"]);

    let form = emptyForm(meta);
    expect(isComplete(form)).toBe(false);
    let html = renderForm(form);
    expect(html.match(/data-covariate=/g)).toHaveLength(3);
    expect(html).toContain('data-role="instrument"'); // schema declares one
    expect(html).toContain('data-role="submit" disabled');

    for (const name of meta.covariates) {
      form = setCovariate(form, name, levelFromOption(meta, name, "0"));
    }
    expect(isComplete(form)).toBe(true);
    html = renderForm(form);
    expect(html).not.toContain("disabled");
  });

  it("reproduces the exact captured request for the baseline consultation", () => {
    const meta = body<MetaDocument>(loadCapture("icu_meta"));
    const capture = loadCapture("icu_recommend_baseline");

    let form = emptyForm(meta);
    for (const name of meta.covariates) {
      form = setCovariate(form, name, levelFromOption(meta, name, "0"));
    }
    // schema levels are integers, so the canonical request carries integers
    expect(requestBody(form)).toEqual(capture.request);
  });

  it("reproduces the exact captured request when intent and instrument are disclosed", () => {
    const meta = body<MetaDocument>(loadCapture("icu_meta"));
    const capture = loadCapture("icu_recommend_disclosed");

    let form = emptyForm(meta);
    form = setCovariate(form, "severe", levelFromOption(meta, "severe", "1"));
    form = setCovariate(form, "resp_support", levelFromOption(meta, "resp_support", "1"));
    form = setCovariate(form, "elderly", levelFromOption(meta, "elderly", "0"));
    form = setIntent(form, "1");
    form = setInstrument(form, "1");
    expect(requestBody(form)).toEqual(capture.request);

    const doc = body<RecommendationDocument>(capture);
    const html = renderRecommendation(doc);
    expect(html).toContain(`stated intent: 1`);
    expect(html).toContain(`recommended action: <strong>${doc.g_sup}</strong>`);
    expectVerbatimNumbers(html, capture.raw, doc);
  });

  it("renders a covariate-free schema with submit immediately available", () => {
    const meta = body<MetaDocument>(loadCapture("ex3_meta"));
    expect(meta.covariates).toEqual([]);
    const form = emptyForm(meta);
    expect(isComplete(form)).toBe(true);
    const html = renderForm(form);
    expect(html).not.toContain("data-covariate=");
    expect(html).toContain('data-role="instrument"');
    expect(html).not.toContain("disabled");
  });

  it("omits the instrument input when the schema declares none", () => {
    const meta = { ...body<MetaDocument>(loadCapture("icu_meta")), has_instrument: false };
    const html = renderForm(emptyForm(meta));
    expect(html).not.toContain('data-role="instrument"');
  });
});

describe("error round trip", () => {
  const FIELDS = ["severe", "resp_support", "elderly", "intent", "instrument"];

  it("shows a rejected level verbatim and points at the offending input", () => {
    const capture = loadCapture("icu_error_unknown_level");
    expect(capture.status).toBe(400);
    const message = errorMessage(capture);
    const html = renderError(capture.status, message, FIELDS);
    expect(html).toContain('role="alert"');
    expect(html).toContain("request failed (400)");
    expect(html).toContain("unknown covariate level severe='5' (declared: [0, 1])");
    expect(html).toContain("<strong>severe</strong>");
  });

  it("points at a missing covariate", () => {
    const capture = loadCapture("icu_error_missing_covariate");
    const html = renderError(capture.status, errorMessage(capture), FIELDS);
    expect(html).toContain("missing covariate 'elderly'");
    expect(html).toContain("<strong>elderly</strong>");
  });

  it("points at a bad intent", () => {
    const capture = loadCapture("ex3_error_bad_intent");
    const html = renderError(capture.status, errorMessage(capture), ["intent", "instrument"]);
    expect(html).toContain("'intent' must be 0 or 1, got 7");
    expect(html).toContain("<strong>intent</strong>");
  });

  it("shows an unknown-path error without inventing a field", () => {
    const capture = loadCapture("ex3_error_unknown_path");
    expect(capture.status).toBe(404);
    const html = renderError(capture.status, errorMessage(capture), FIELDS);
    expect(html).toContain("request failed (404)");
    expect(html).toContain("unknown path '/nope'");
    expect(html).not.toContain("error-field");
  });
});
