/** JSON shapes served by the chat2img gateway. */

export interface TurnJson {
  role: string; // "user" | "assistant"
  text: string;
}

export interface ChatInputJson {
  kind: string; // "single" | "multimodal" | "history"
  turns: TurnJson[];
  image_ref?: string;
}

export interface SelectionJson {
  model_id: string;
  probability: number | null;
  model_block_probs: number[];
  mode: string;
  no_model: boolean;
}

export interface JobJson {
  job_id: string;
  status: string; // queued | running | done | failed
  image_digest: string | null;
  error: string | null;
}

export type ArgValue = string | number | boolean;

export interface TraceJson {
  trace_id: string;
  mode: string; // evo | direct | fixed_baseline
  created_at: number;
  sample_id: string | null;
  input: ChatInputJson;
  rewritten_prompt: string | null;
  selection: SelectionJson | null;
  args: Record<string, ArgValue> | null;
  arg_fallback: boolean;
  arg_retries: number;
  demo_ids: string[];
  image_job: JobJson | null;
  durations: Record<string, number>;
  failing_stage: string | null;
  error: string | null;
  error_kind: string | null; // "backend" | "logic"
}

export interface ChatResponse {
  trace: TraceJson;
  job_id: string | null;
  session_id: string;
}

export interface ModelJson {
  model_id: string;
  display_name: string;
  description: string;
  base_family: string;
  token_index: number;
  default_args: Record<string, ArgValue>;
  demo_ids: string[];
}

export interface ModelsPage {
  models: ModelJson[];
  total: number;
  offset: number;
  limit: number;
}
