/** Browser entry point: wires the chat box, history, trace cards, and
 * render-job polling to the gateway. Kept thin; everything testable lives
 * in api.ts / poller.ts / render.ts. */

import { GatewayClient } from "./api.js";
import { pollJob, type JobPoller } from "./poller.js";
import { renderHistory, renderTraceCard } from "./render.js";
import type { TurnJson } from "./types.js";

// serve this page from the gateway origin, or point it elsewhere with
// ?gateway=http://127.0.0.1:8080
const gatewayBase =
  new URLSearchParams(window.location.search).get("gateway") ??
  window.location.origin;
const client = new GatewayClient(gatewayBase, (input, init) =>
  fetch(input, init),
);

let sessionId: string | undefined;
let modelNames: Record<string, string> = {};
const pollers: JobPoller[] = [];

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

function setHistory(turns: TurnJson[]): void {
  byId<HTMLDivElement>("history").innerHTML = renderHistory(turns);
}

function setBusy(busy: boolean): void {
  byId<HTMLButtonElement>("send").disabled = busy;
  byId<HTMLInputElement>("text").disabled = busy;
}

async function onSend(): Promise<void> {
  const textInput = byId<HTMLInputElement>("text");
  const imageInput = byId<HTMLInputElement>("image");
  const text = textInput.value.trim();
  if (!text) {
    return;
  }
  setBusy(true);
  try {
    const image =
      sessionId === undefined ? (imageInput.files?.[0] ?? undefined) : undefined;
    const resp = await client.sendChat(text, sessionId, image);
    sessionId = resp.session_id;
    imageInput.disabled = true; // uploads only open a session
    textInput.value = "";

    setHistory([...resp.trace.input.turns]);

    const cards = byId<HTMLDivElement>("cards");
    const holder = document.createElement("div");
    holder.innerHTML = renderTraceCard(resp.trace, modelNames);
    const card = holder.firstElementChild as HTMLElement;
    cards.prepend(card);

    if (resp.job_id !== null) {
      const slot = document.createElement("div");
      slot.className = "image-slot";
      slot.textContent = "rendering…";
      card.append(slot);
      const poller = pollJob(client, resp.job_id);
      pollers.push(poller);
      const settled = await poller.result;
      if (settled === null) {
        return; // cancelled (page reset)
      }
      if (settled.imageUrl !== undefined) {
        const img = document.createElement("img");
        img.src = settled.imageUrl;
        img.alt = resp.trace.rewritten_prompt ?? "generated image";
        slot.replaceChildren(img);
      } else {
        slot.textContent = `render failed: ${settled.error ?? "unknown error"}`;
      }
    }
  } catch (error) {
    const cards = byId<HTMLDivElement>("cards");
    const note = document.createElement("div");
    note.className = "failure-banner failure-transport";
    note.textContent = error instanceof Error ? error.message : String(error);
    cards.prepend(note);
  } finally {
    setBusy(false);
  }
}

async function init(): Promise<void> {
  try {
    const page = await client.getModels(0, 200);
    modelNames = Object.fromEntries(
      page.models.map((m) => [m.model_id, m.display_name]),
    );
    byId<HTMLSpanElement>("model-count").textContent = String(page.total);
  } catch {
    byId<HTMLSpanElement>("model-count").textContent = "?";
  }
  byId<HTMLButtonElement>("send").addEventListener("click", () => {
    void onSend();
  });
  byId<HTMLInputElement>("text").addEventListener("keydown", (event) => {
    if (event.key === "Enter") {
      void onSend();
    }
  });
  window.addEventListener("beforeunload", () => {
    for (const poller of pollers) {
      poller.cancel();
    }
  });
}

void init();
