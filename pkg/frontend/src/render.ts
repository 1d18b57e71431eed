/** Plain-text rendering helpers: inline diff with generated tokens
 * bracketed, and an end-vowel gutter column per line. */

import { Candidate, DiffToken } from "./editor.js";

export function renderDiffLine(tokens: DiffToken[]): string {
  return tokens
    .map((t) => (t.origin === "generated" ? `[${t.surface}]` : t.surface))
    .join("");
}

export function renderDiff(diff: DiffToken[][]): string {
  return diff.map(renderDiffLine).join("\n");
}

/** End-vowel gutter for a candidate, one entry per line. Lines whose end
 * token was not regenerated have no recorded vowel and render as "-". */
export function endVowelGutter(candidate: Candidate): string[] {
  const { song, provenance, end_vowels } = candidate.response;
  const gutter: string[] = [];
  let next = 0;
  song.lines.forEach((_, si) => {
    const row = provenance[si];
    if (row[row.length - 1] === "generated") {
      gutter.push(end_vowels[next++] ?? "-");
    } else {
      gutter.push("-");
    }
  });
  return gutter;
}

export function renderSideBySide(
  sourceLines: string[],
  diff: DiffToken[][],
  gutter: string[],
): string {
  const width = Math.max(...sourceLines.map((l) => l.length));
  return sourceLines
    .map(
      (line, i) =>
        `${line.padEnd(width)}  |  ${renderDiffLine(diff[i])}  ${gutter[i]}`,
    )
    .join("\n");
}
