// DOM wiring.  All rendering logic lives in view.ts; all state transitions in
// form.ts.  This file only connects events to those pure functions.

import { fetchMeta, postRecommend, ServiceError } from "./api.js";
import type { MetaDocument } from "./api.js";
import {
  emptyForm,
  levelFromOption,
  requestBody,
  setCovariate,
  setInstrument,
  setIntent,
  type FormState,
  type InstrumentChoice,
  type IntentChoice,
} from "./form.js";
import {
  renderError,
  renderForm,
  renderRecommendation,
  renderRetryBanner,
} from "./view.js";
import { createSequencer } from "./sequence.js";

function serviceBase(): string {
  const param = new URLSearchParams(window.location.search).get("service");
  return param ?? "http://127.0.0.1:8000";
}

const formRoot = document.getElementById("form")!;
const resultRoot = document.getElementById("result")!;
const statusRoot = document.getElementById("status")!;

const base = serviceBase();
const sequencer = createSequencer();

let form: FormState | null = null;

function redrawForm(): void {
  if (form !== null) {
    formRoot.innerHTML = renderForm(form);
  }
}

async function init(): Promise<void> {
  statusRoot.innerHTML = "";
  try {
    const meta: MetaDocument = await fetchMeta(base);
    form = emptyForm(meta);
    redrawForm();
    resultRoot.innerHTML = "";
  } catch (err) {
    // Unreachable service: offer a retry instead of a dead page.
    const message = err instanceof Error ? err.message : String(err);
    statusRoot.innerHTML = renderRetryBanner(base, message);
  }
}

async function submit(): Promise<void> {
  if (form === null) return;
  const token = sequencer.begin();
  const body = requestBody(form);
  const fields = [...form.meta.covariates, "intent", "instrument"];
  try {
    const doc = await postRecommend(base, body);
    if (!sequencer.isCurrent(token)) return; // a newer consultation superseded this one
    resultRoot.innerHTML = renderRecommendation(doc);
  } catch (err) {
    if (!sequencer.isCurrent(token)) return;
    if (err instanceof ServiceError) {
      resultRoot.innerHTML = renderError(err.status, err.message, fields);
    } else {
      const message = err instanceof Error ? err.message : String(err);
      statusRoot.innerHTML = renderRetryBanner(base, message);
    }
  }
}

formRoot.addEventListener("change", (event) => {
  if (form === null) return;
  const target = event.target;
  if (!(target instanceof HTMLSelectElement)) return;
  const covariate = target.dataset["covariate"];
  if (covariate !== undefined) {
    form = setCovariate(form, covariate, levelFromOption(form.meta, covariate, target.value));
  } else if (target.dataset["role"] === "intent") {
    form = setIntent(form, target.value as IntentChoice);
  } else if (target.dataset["role"] === "instrument") {
    form = setInstrument(form, target.value as InstrumentChoice);
  }
  redrawForm();
});

formRoot.addEventListener("click", (event) => {
  const target = event.target;
  if (target instanceof HTMLButtonElement && target.dataset["role"] === "submit") {
    void submit();
  }
});

statusRoot.addEventListener("click", (event) => {
  const target = event.target;
  if (target instanceof HTMLButtonElement && target.dataset["role"] === "retry") {
    void init();
  }
});

void init();
