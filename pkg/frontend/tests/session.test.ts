/** Session contract: the gateway stores one user turn and one assistant
 * summary per exchange, so the k-th send carries 2k-1 turns of history
 * (3 on the second send, 5 on the third). Fixtures were recorded from one
 * live session against the mock-backed gateway. */

import { describe, expect, it } from "vitest";

import send1 from "./fixtures/chat_send1.json";
import send2 from "./fixtures/chat_send2.json";
import send3 from "./fixtures/chat_send3.json";
import modelsFixture from "./fixtures/models.json";

import { GatewayClient } from "../src/api.js";
import type { ChatResponse, ModelsPage } from "../src/types.js";

const fixtures = [send1, send2, send3] as unknown as ChatResponse[];
const models = modelsFixture as unknown as ModelsPage;

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("recorded session history", () => {
  it("keeps one session id across all three sends", () => {
    expect(send2.session_id).toBe(send1.session_id);
    expect(send3.session_id).toBe(send1.session_id);
    const ids = new Set(fixtures.map((f) => f.trace.trace_id));
    expect(ids.size).toBe(3);
  });

  it("grows to 3 turns on the second send and 5 on the third", () => {
    expect(send1.trace.input.kind).toBe("single");
    expect(send1.trace.input.turns).toHaveLength(1);

    expect(send2.trace.input.kind).toBe("history");
    const second = send2.trace.input.turns;
    expect(second).toHaveLength(3);
    expect(second.map((t) => t.role)).toEqual(["user", "assistant", "user"]);

    const third = send3.trace.input.turns;
    expect(third).toHaveLength(5);
    expect(third.map((t) => t.role)).toEqual([
      "user",
      "assistant",
      "user",
      "assistant",
      "user",
    ]);
  });

  it("preserves earlier user turns byte-for-byte", () => {
    const firstText = send1.trace.input.turns[0]!.text;
    expect(send2.trace.input.turns[0]!.text).toBe(firstText);
    expect(send3.trace.input.turns[0]!.text).toBe(firstText);
    expect(send3.trace.input.turns[2]!.text).toBe(
      send2.trace.input.turns[2]!.text,
    );
  });

  it("summarizes each exchange as 'prompt [model: display name]'", () => {
    const names = Object.fromEntries(
      models.models.map((m) => [m.model_id, m.display_name]),
    );
    const summary = send2.trace.input.turns[1]!.text;
    const display = names[send1.trace.selection!.model_id];
    expect(summary).toBe(
      `${send1.trace.rewritten_prompt} [model: ${display}]`,
    );
  });
});

describe("client session threading", () => {
  it("threads the session id through consecutive sends", async () => {
    const bodies: Array<Record<string, string>> = [];
    let call = 0;
    const client = new GatewayClient("http://gw", async (_input, init) => {
      bodies.push(JSON.parse(init!.body as string));
      return jsonResponse(fixtures[call++]);
    });

    const first = await client.sendChat("a lighthouse on a cliff at dusk");
    const second = await client.sendChat(
      "make the sea stormier",
      first.session_id,
    );
    const third = await client.sendChat(
      "and move closer to the rocks",
      second.session_id,
    );

    expect(bodies[0]).not.toHaveProperty("session_id");
    expect(bodies[1]!.session_id).toBe(first.session_id);
    expect(bodies[2]!.session_id).toBe(first.session_id);
    expect(second.trace.input.turns).toHaveLength(3);
    expect(third.trace.input.turns).toHaveLength(5);
  });
});
