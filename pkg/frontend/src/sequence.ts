// One in-flight consultation per form: each submit takes a fresh token and
// only the response holding the latest token may render.  Responses that
// come back out of order are dropped, not merged.

export interface Sequencer {
  begin(): number;
  isCurrent(token: number): boolean;
}

export function createSequencer(): Sequencer {
  let latest = 0;
  return {
    begin: () => ++latest,
    isCurrent: (token: number) => token === latest,
  };
}
