/** Headless studio state machine: span selection, constraint editing,
 * candidate history, adopt/undo. All validation happens client-side before
 * any request leaves the editor. */

import { RewriteRequestBody, ServiceClient } from "./client.js";
import { tokenizeLine } from "./tokens.js";
import {
  DecodeKnobs,
  MAX_KEYWORDS,
  MaskSpec,
  RewriteResponse,
  Span,
  SongRecord,
} from "./wire.js";

export class ValidationError extends Error {}

export interface VowelTag {
  sentence: number;
  token: number;
  vowel: string;
}

export interface Candidate {
  id: number;
  spec: MaskSpec;
  knobs: DecodeKnobs;
  seed: number;
  response: RewriteResponse;
}

export type DiffToken = { surface: string; origin: "original" | "generated" };

export class EditorState {
  source: SongRecord;
  tokens: string[][];
  spans: Span[] = [];
  keywords: string[] = [];
  vowelTags: VowelTag[] = [];
  candidates: Candidate[] = [];
  notices: string[] = [];
  vowelInventory: string[] | null = null;
  diffViewMode: "inline" | "side-by-side" = "inline";
  private undoStack: SongRecord[] = [];
  private nextId = 0;

  constructor(source: SongRecord) {
    SongRecord.parse(source);
    this.source = source;
    this.tokens = source.lines.map(tokenizeLine);
  }

  loadVowelInventory(vowels: string[]): void {
    this.vowelInventory = [...vowels];
  }

  // ---- span selection -----------------------------------------------------

  selectSpan(sentence: number, start: number, length: number): Span {
    if (sentence < 0 || sentence >= this.tokens.length) {
      throw new ValidationError(`sentence ${sentence} out of range`);
    }
    const n = this.tokens[sentence].length;
    if (length < 1 || start < 0 || start + length > n) {
      throw new ValidationError(
        `span [${start}, ${start + length}) outside sentence of ${n} tokens`,
      );
    }
    const span = { sentence, start, length };
    this.spans = mergeSpans([...this.spans, span], (msg) =>
      this.notices.push(msg),
    );
    return span;
  }

  selectLine(sentence: number): Span {
    return this.selectSpan(sentence, 0, this.tokens[sentence].length);
  }

  clearSelection(): void {
    this.spans = [];
    this.vowelTags = [];
  }

  clearConstraints(): void {
    this.keywords = [];
    this.vowelTags = [];
  }

  isMasked(sentence: number, token: number): boolean {
    return this.spans.some(
      (s) =>
        s.sentence === sentence && token >= s.start && token < s.start + s.length,
    );
  }

  // ---- constraints --------------------------------------------------------

  addKeyword(keyword: string): void {
    if (!keyword) throw new ValidationError("empty keyword");
    if (this.keywords.length >= MAX_KEYWORDS) {
      throw new ValidationError(`at most ${MAX_KEYWORDS} keywords`);
    }
    this.keywords.push(keyword);
  }

  tagVowel(sentence: number, token: number, vowel: string): void {
    if (this.vowelInventory && !this.vowelInventory.includes(vowel)) {
      throw new ValidationError(`unknown vowel name: ${vowel}`);
    }
    if (!this.isMasked(sentence, token)) {
      throw new ValidationError(
        `position (${sentence}, ${token}) is not inside a selected span`,
      );
    }
    this.vowelTags = this.vowelTags.filter(
      (t) => !(t.sentence === sentence && t.token === token),
    );
    this.vowelTags.push({ sentence, token, vowel });
  }

  // ---- spec + rewrite -----------------------------------------------------

  buildSpec(): MaskSpec {
    return MaskSpec.parse({
      spans: [...this.spans].sort(
        (a, b) => a.sentence - b.sentence || a.start - b.start,
      ),
      required_vowels: [...this.vowelTags].sort(
        (a, b) => a.sentence - b.sentence || a.token - b.token,
      ),
      keywords: [...this.keywords],
    });
  }

  canRewrite(): boolean {
    return this.spans.length > 0;
  }

  async runRewrite(
    client: ServiceClient,
    knobs: Partial<DecodeKnobs> = {},
    seed?: number,
  ): Promise<Candidate> {
    if (!this.canRewrite()) {
      throw new ValidationError("no spans selected; rewrite is disabled");
    }
    const fullKnobs = DecodeKnobs.parse(knobs);
    const spec = this.buildSpec();
    const body: RewriteRequestBody = {
      song: this.source,
      mask: spec,
      knobs: fullKnobs,
    };
    if (seed !== undefined) body.seed = seed;
    const response = await client.rewrite(body);
    this.assertDiffWithinSpans(response);
    const duplicate = this.candidates.find(
      (c) => JSON.stringify(c.response) === JSON.stringify(response),
    );
    if (duplicate) {
      this.notices.push(
        `candidate identical to #${duplicate.id}; deduplicated`,
      );
      return duplicate;
    }
    const candidate: Candidate = {
      id: this.nextId++,
      spec,
      knobs: fullKnobs,
      seed: response.seed,
      response,
    };
    this.candidates.push(candidate);
    return candidate;
  }

  /** Re-issue a candidate's recorded {spec, knobs, seed} verbatim. */
  async replay(client: ServiceClient, candidate: Candidate): Promise<RewriteResponse> {
    return client.rewrite({
      song: this.source,
      mask: candidate.spec,
      knobs: candidate.knobs,
      seed: candidate.seed,
    });
  }

  private assertDiffWithinSpans(response: RewriteResponse): void {
    response.provenance.forEach((row, si) => {
      row.forEach((origin, ti) => {
        if (origin === "generated" && !this.isMasked(si, ti)) {
          throw new Error(
            `service mutated unmasked token (${si}, ${ti}); rendering error state`,
          );
        }
      });
    });
  }

  // ---- adopt / undo -------------------------------------------------------

  adopt(candidate: Candidate): void {
    this.undoStack.push(this.source);
    this.source = candidate.response.song;
    this.tokens = this.source.lines.map(tokenizeLine);
    this.spans = [];
    this.vowelTags = [];
  }

  undo(): void {
    const prev = this.undoStack.pop();
    if (!prev) throw new ValidationError("nothing to undo");
    this.source = prev;
    this.tokens = this.source.lines.map(tokenizeLine);
    this.spans = [];
    this.vowelTags = [];
  }

  // ---- views --------------------------------------------------------------

  tokenDiff(candidate: Candidate): DiffToken[][] {
    return candidate.response.song.lines.map((line, si) =>
      tokenizeLine(line).map((surface, ti) => ({
        surface,
        origin: candidate.response.provenance[si][ti],
      })),
    );
  }
}

export function mergeSpans(
  spans: Span[],
  onMerge?: (notice: string) => void,
): Span[] {
  const bySentence = new Map<number, Span[]>();
  for (const s of spans) {
    const list = bySentence.get(s.sentence) ?? [];
    list.push(s);
    bySentence.set(s.sentence, list);
  }
  const out: Span[] = [];
  for (const [sentence, list] of [...bySentence.entries()].sort(
    (a, b) => a[0] - b[0],
  )) {
    list.sort((a, b) => a.start - b.start);
    let current = { ...list[0] };
    for (const s of list.slice(1)) {
      if (s.start <= current.start + current.length) {
        const end = Math.max(current.start + current.length, s.start + s.length);
        if (s.start < current.start + current.length) {
          onMerge?.(
            `overlapping spans merged in sentence ${sentence} at token ${s.start}`,
          );
        }
        current.length = end - current.start;
      } else {
        out.push(current);
        current = { ...s };
      }
    }
    out.push(current);
  }
  return out;
}
