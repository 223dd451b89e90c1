// Wire types mirroring the annotation service responses verbatim.
// The console never derives its own numbers; everything displayed comes
// from these payloads.

export interface MentionWire {
  sent_id: number;
  pos: [number, number];
  name: string;
  type: string;
}

export interface DocumentWire {
  title: string;
  sents: string[][];
  vertexSet: MentionWire[][];
  labels: { h: number; t: number; r: string; evidence: number[] }[];
}

export interface RelationOption {
  id: string;
  display: string;
  long_tail: boolean;
}

export interface QueueItemView {
  title: string;
  h_idx: number;
  t_idx: number;
  iteration: number;
  score: number;
  document: DocumentWire;
  predictions: Record<string, string[]>;
  relations: RelationOption[];
}

export interface RoundStats {
  per_iteration: Record<string, { long_tail: number; frequent: number; na: number }>;
  totals: { long_tail: number; frequent: number; na: number };
}

export interface StatusView {
  run_id: string;
  iteration: number;
  budget_used: number;
  budget: number;
  mean_disagreement: number;
  mean_history: number[];
  round_stats: RoundStats;
  queue: { pending: number; leased: number };
  phase: "annotating" | "ready_to_advance" | "terminal";
  stop_reason: string | null;
  dds_labels: number | null;
}

export interface NextResponse {
  item: QueueItemView | null;
  status: StatusView;
}

export interface AnnotationBody {
  title: string;
  h_idx: number;
  t_idx: number;
  labels: string[];
  annotator: string;
}
