import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { fakeClient } from "./helpers/fake.js";

describe("api client", () => {
  it("parses model info", async () => {
    const { api } = fakeClient();
    const info = await api.model();
    expect(info.K).toBe(3);
    expect(info.class_names).toHaveLength(2);
  });

  it("echoes the failing request in errors", async () => {
    const { api } = fakeClient();
    await expect(api.example("test", 99)).rejects.toMatchObject({
      status: 404,
      request: "GET /examples?split=test&index=99",
    });
  });

  it("merges the hint of enumeration-limit errors", async () => {
    const fetchFn = async () =>
      new Response(
        JSON.stringify({ detail: "too large", hint: "retry with mode=gradient" }),
        { status: 422 });
    const api = new ApiClient("http://x", fetchFn);
    try {
      await api.model();
      expect.unreachable();
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).detail).toContain("retry with mode=gradient");
    }
  });

  it("wraps network failures with status 0", async () => {
    const api = new ApiClient("http://x", async () => {
      throw new Error("connection refused");
    });
    await expect(api.health()).rejects.toMatchObject({ status: 0 });
  });
});
