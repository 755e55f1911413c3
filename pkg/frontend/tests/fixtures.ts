// Loader for the golden fixtures captured from the live Python service by
// scripts/make_ui_fixtures.py.  `raw` is the response body exactly as the
// service sent it, so tests can check the page shows those bytes unchanged.

import { readFileSync } from "node:fs";

export interface Capture {
  path: string;
  request: unknown;
  status: number;
  raw: string;
}

export function loadCapture(name: string): Capture {
  const url = new URL(`./fixtures/${name}.json`, import.meta.url);
  return JSON.parse(readFileSync(url, "utf8")) as Capture;
}

export function body<T>(capture: Capture): T {
  return JSON.parse(capture.raw) as T;
}

export function errorMessage(capture: Capture): string {
  return (JSON.parse(capture.raw) as { error: string }).error;
}
