/** Thin fetch client for the rewrite service. */

import {
  DecodeKnobs,
  MaskSpec,
  Meta,
  MetricReport,
  RewriteResponse,
  ServiceError,
  SongRecord,
} from "./wire.js";

export class ServiceRequestError extends Error {
  constructor(
    public status: number,
    public detail: ServiceError,
  ) {
    super(`${detail.code}: ${detail.message}`);
  }
}

async function post(base: string, path: string, body: unknown): Promise<unknown> {
  const res = await fetch(base + path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  const payload = await res.json();
  if (!res.ok) {
    throw new ServiceRequestError(res.status, ServiceError.parse(payload));
  }
  return payload;
}

export interface RewriteRequestBody {
  song: SongRecord;
  mask: MaskSpec;
  knobs: DecodeKnobs;
  seed?: number;
}

export class ServiceClient {
  constructor(public baseUrl: string) {}

  async rewrite(req: RewriteRequestBody): Promise<RewriteResponse> {
    const body: Record<string, unknown> = {
      song: req.song,
      mask: req.mask,
      ...req.knobs,
    };
    if (req.seed !== undefined) body.seed = req.seed;
    return RewriteResponse.parse(await post(this.baseUrl, "/rewrite", body));
  }

  async maskSample(
    song: SongRecord,
    scheme: "token" | "sent" | "all",
    opts: { ratio?: number; seed?: number } = {},
  ): Promise<MaskSpec & { seed: number }> {
    const payload = await post(this.baseUrl, "/mask/sample", {
      song,
      scheme,
      ...opts,
    });
    const spec = MaskSpec.parse(payload);
    return { ...spec, seed: (payload as { seed: number }).seed };
  }

  async metrics(songs: SongRecord[]): Promise<MetricReport> {
    return MetricReport.parse(await post(this.baseUrl, "/metrics", { songs }));
  }

  async meta(): Promise<Meta> {
    const res = await fetch(this.baseUrl + "/meta");
    return Meta.parse(await res.json());
  }
}
