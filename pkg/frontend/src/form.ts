// Form state: the served schema plus the user's current choices.  State is
// immutable; every change returns a new object so rendering stays a pure
// function of the state.

import type { MetaDocument } from "./api.js";

export type Level = string | number;
export type IntentChoice = "undisclosed" | "0" | "1";
export type InstrumentChoice = "unset" | "0" | "1";

export interface FormState {
  meta: MetaDocument;
  values: Record<string, Level | null>;
  intent: IntentChoice;
  instrument: InstrumentChoice;
}

export interface RecommendRequest {
  covariates: Record<string, Level>;
  intent?: number;
  instrument?: number;
}

export function emptyForm(meta: MetaDocument): FormState {
  const values: Record<string, Level | null> = {};
  for (const name of meta.covariates) {
    values[name] = null;
  }
  return { meta, values, intent: "undisclosed", instrument: "unset" };
}

export function setCovariate(form: FormState, name: string, value: Level | null): FormState {
  if (!(name in form.values)) {
    throw new Error(`unknown covariate ${name}`);
  }
  return { ...form, values: { ...form.values, [name]: value } };
}

export function setIntent(form: FormState, intent: IntentChoice): FormState {
  return { ...form, intent };
}

export function setInstrument(form: FormState, instrument: InstrumentChoice): FormState {
  return { ...form, instrument };
}

// Submit stays gated until every schema-declared covariate has a value.
export function isComplete(form: FormState): boolean {
  return form.meta.covariates.every((name) => form.values[name] !== null);
}

export function requestBody(form: FormState): RecommendRequest {
  const covariates: Record<string, Level> = {};
  for (const name of form.meta.covariates) {
    const value = form.values[name];
    if (value === null || value === undefined) {
      throw new Error(`covariate ${name} not chosen`);
    }
    covariates[name] = value;
  }
  const body: RecommendRequest = { covariates };
  if (form.intent !== "undisclosed") {
    body.intent = Number(form.intent);
  }
  if (form.meta.has_instrument && form.instrument !== "unset") {
    body.instrument = Number(form.instrument);
  }
  return body;
}

// Levels round-trip through <option value="..."> as strings; find the
// original (possibly numeric) level whose string form matches.
export function levelFromOption(meta: MetaDocument, name: string, raw: string): Level | null {
  if (raw === "") {
    return null;
  }
  for (const level of meta.levels[name] ?? []) {
    if (String(level) === raw) {
      return level;
    }
  }
  return null;
}
