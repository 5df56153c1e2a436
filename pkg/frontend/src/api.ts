// Client for GET /suggest. The response field names are the service's
// stable JSON contract; nothing else of the backend is visible here.

export interface Suggestion {
  text: string;
  score: number;
}

export interface SuggestResponse {
  prefix: string;
  strategy: string;
  latency_ms: number;
  suggestions: Suggestion[];
}

export interface SuggestQuery {
  prefix: string;
  k?: number;
  strategy?: string;
  user?: string;
  /** ISO-8601 timestamp override for the time-aware model. */
  t?: string;
}

export type SuggestFetcher = (
  query: SuggestQuery,
  signal?: AbortSignal
) => Promise<SuggestResponse>;

export function suggestUrl(base: string, query: SuggestQuery): string {
  const params = new URLSearchParams({ prefix: query.prefix });
  if (query.k !== undefined) params.set("k", String(query.k));
  if (query.strategy) params.set("strategy", query.strategy);
  if (query.user) params.set("user", query.user);
  if (query.t) params.set("t", query.t);
  return `${base}/suggest?${params.toString()}`;
}

/** Fetcher bound to a service origin ("" for same-origin deployments). */
export function httpFetcher(
  base: string,
  fetchImpl: typeof fetch = fetch
): SuggestFetcher {
  return async (query, signal) => {
    const response = await fetchImpl(suggestUrl(base, query), { signal });
    const body = await response.json();
    if (!response.ok) {
      throw new Error(body?.error ?? `request failed with ${response.status}`);
    }
    return body as SuggestResponse;
  };
}
