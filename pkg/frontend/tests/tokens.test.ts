import { describe, expect, it } from "vitest";

import { detokenizeLine, tokenizeLine } from "../src/tokens.js";

describe("tokenizeLine", () => {
  it("splits CJK per character", () => {
    expect(tokenizeLine("后来")).toEqual(["后", "来"]);
  });

  it("keeps latin runs as words", () => {
    expect(tokenizeLine("我爱 rock")).toEqual(["我", "爱", "rock"]);
  });

  it("splits latin words on whitespace", () => {
    expect(tokenizeLine("hello  world")).toEqual(["hello", "world"]);
  });

  it("handles empty input", () => {
    expect(tokenizeLine("")).toEqual([]);
  });

  it("round-trips with spaces only between adjacent latin words", () => {
    expect(detokenizeLine(["我", "爱", "rock", "on"])).toBe("我爱rock on");
    expect(detokenizeLine(["后", "来"])).toBe("后来");
  });
});
