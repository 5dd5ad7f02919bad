/** Cancellable render-job polling with the interval capped at one second. */

import type { JobPollResult } from "./api.js";

export const MAX_POLL_INTERVAL_MS = 1000;
export const MIN_POLL_INTERVAL_MS = 50;

export interface JobPollSource {
  pollJobOnce(jobId: string): Promise<JobPollResult>;
}

export interface JobPoller {
  /** Resolves with the settled job, or null if cancelled first. */
  result: Promise<JobPollResult | null>;
  cancel(): void;
}

export function pollJob(
  source: JobPollSource,
  jobId: string,
  intervalMs = 500,
): JobPoller {
  const interval = Math.min(
    Math.max(intervalMs, MIN_POLL_INTERVAL_MS),
    MAX_POLL_INTERVAL_MS,
  );
  let cancelled = false;
  let timer: ReturnType<typeof setTimeout> | undefined;
  let settle!: (value: JobPollResult | null) => void;
  let fail!: (error: unknown) => void;
  const result = new Promise<JobPollResult | null>((resolve, reject) => {
    settle = resolve;
    fail = reject;
  });

  const tick = async (): Promise<void> => {
    if (cancelled) {
      return;
    }
    let poll: JobPollResult;
    try {
      poll = await source.pollJobOnce(jobId);
    } catch (error) {
      if (!cancelled) {
        fail(error);
      }
      return;
    }
    if (cancelled) {
      return;
    }
    if (poll.settled) {
      settle(poll);
      return;
    }
    timer = setTimeout(() => {
      void tick();
    }, interval);
  };
  void tick();

  return {
    result,
    cancel(): void {
      if (cancelled) {
        return;
      }
      cancelled = true;
      if (timer !== undefined) {
        clearTimeout(timer);
      }
      settle(null);
    },
  };
}
