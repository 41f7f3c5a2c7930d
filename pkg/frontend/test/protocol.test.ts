import { describe, expect, it } from "vitest";
import {
  allLinkKeys,
  formatBer,
  formatDb,
  formatPct,
  formatRate,
  linkKey,
  parseLinkKey,
  parseRecord,
} from "../src/protocol.js";

describe("parseRecord", () => {
  it("accepts every record type the service emits", () => {
    for (const type of ["hello", "snapshot", "constellation", "event", "ack"]) {
      const rec = parseRecord(JSON.stringify({ type, x: 1 }));
      expect(rec).not.toBeNull();
      expect(rec!.type).toBe(type);
    }
  });

  it("returns null instead of throwing on junk", () => {
    expect(parseRecord("{not json")).toBeNull();
    expect(parseRecord("42")).toBeNull();
    expect(parseRecord("[1,2]")).toBeNull();
    expect(parseRecord("null")).toBeNull();
    expect(parseRecord('{"type": 7}')).toBeNull();
    expect(parseRecord('{"type": "summary"}')).toBeNull();
    expect(parseRecord('{"no_type": true}')).toBeNull();
  });
});

describe("link keys", () => {
  it("round trips", () => {
    expect(parseLinkKey(linkKey(2, 0))).toEqual([2, 0]);
  });

  it("rejects self links and malformed keys", () => {
    expect(parseLinkKey("1->1")).toBeNull();
    expect(parseLinkKey("4->0")).toBeNull();
    expect(parseLinkKey("0-1")).toBeNull();
    expect(parseLinkKey("a->b")).toBeNull();
  });

  it("enumerates exactly the 12 directed pairs", () => {
    const keys = allLinkKeys();
    expect(keys).toHaveLength(12);
    expect(new Set(keys).size).toBe(12);
    for (const key of keys) expect(parseLinkKey(key)).not.toBeNull();
  });
});

describe("formatting", () => {
  it("keeps the aggregate banner in Mbps", () => {
    expect(formatRate(1_198_080_000)).toBe("1198.08 Mbps");
    expect(formatRate(99_840_000)).toBe("99.84 Mbps");
  });

  it("steps down for small rates", () => {
    expect(formatRate(48)).toBe("48.00 bps");
    expect(formatRate(43_300)).toBe("43.30 kbps");
  });

  it("shows BER compactly", () => {
    expect(formatBer(0)).toBe("0");
    expect(formatBer(3.2e-6)).toBe("3.20e-6");
  });

  it("tolerates nulls from the wire", () => {
    expect(formatDb(null)).toBe("--");
    expect(formatPct(null)).toBe("--");
    expect(formatDb(27.96)).toBe("28.0 dB");
    expect(formatPct(4.26)).toBe("4.3%");
  });
});
