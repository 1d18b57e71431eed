/** Client-side tokenization mirroring the service: one token per CJK
 * character, whitespace-delimited runs of other characters as single tokens. */

const CJK = /[㐀-䶿一-鿿豈-﫿]/;

export function tokenizeLine(line: string): string[] {
  const tokens: string[] = [];
  let word = "";
  const flush = () => {
    if (word) {
      tokens.push(word);
      word = "";
    }
  };
  for (const ch of line) {
    if (/\s/.test(ch)) {
      flush();
    } else if (CJK.test(ch)) {
      flush();
      tokens.push(ch);
    } else {
      word += ch;
    }
  }
  flush();
  return tokens;
}

export function detokenizeLine(tokens: string[]): string {
  let out = "";
  for (let i = 0; i < tokens.length; i++) {
    const latin = !CJK.test(tokens[i][0]);
    const prevLatin = i > 0 && !CJK.test(tokens[i - 1][0]);
    if (latin && prevLatin) out += " ";
    out += tokens[i];
  }
  return out;
}
