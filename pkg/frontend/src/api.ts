// Typed client for the consultation service.  Every number in a response
// passes through untouched: the UI displays service values verbatim and
// never recomputes a statistic on its own.

export interface ValueRow {
  point: number;
  ci_lo: number;
  ci_hi: number;
}

export interface MetaDocument {
  type: string;
  covariates: string[];
  levels: Record<string, Array<string | number>>;
  has_instrument: boolean;
  regime_kinds: string[];
  value_estimates: Record<string, ValueRow>;
  n_rows: number;
  schema_version: number;
}

export interface RecommendationDocument {
  g_opt: number;
  g_sup_by_intent: Record<string, number>;
  g_zsup_by_intent?: Record<string, number>;
  gamma: number;
  instruction: string;
  value_estimates: Record<string, ValueRow>;
  intent?: number;
  instrument?: number;
  g_sup?: number;
  g_zsup?: number;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

async function parseOrThrow(res: Response): Promise<unknown> {
  const text = await res.text();
  let body: unknown = null;
  try {
    body = JSON.parse(text);
  } catch {
    // non-JSON body; status handling below still applies
  }
  if (!res.ok) {
    const message =
      body && typeof (body as { error?: unknown }).error === "string"
        ? (body as { error: string }).error
        : `HTTP ${res.status}`;
    throw new ServiceError(res.status, message);
  }
  return body;
}

export async function fetchMeta(base: string): Promise<MetaDocument> {
  const res = await fetch(`${base}/meta`);
  return (await parseOrThrow(res)) as MetaDocument;
}

export async function postRecommend(base: string, body: object): Promise<RecommendationDocument> {
  const res = await fetch(`${base}/recommend`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  return (await parseOrThrow(res)) as RecommendationDocument;
}

// The service names the offending field inside its error message, either
// quoted ('intent') or as a name=value pair (severe='5').  Find it so the
// form can point at the right input; null when no candidate matches.
export function offendingField(message: string, candidates: string[]): string | null {
  for (const name of candidates) {
    if (message.includes(`'${name}'`) || message.includes(`${name}=`)) {
      return name;
    }
  }
  return null;
}
