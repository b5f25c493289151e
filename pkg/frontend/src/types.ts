// Payload shapes mirroring the review service API.

export type Rotation = 0 | 90 | 180 | 270;

export type QueueName = "initial_labeling" | "illegible_review" | "conflict_review";

export interface LabelAssignment {
  label: string;
  source: "human" | "propagated" | "vlm";
  probability: number;
  created_at: string;
}

export interface MarkingView {
  marking_id: string;
  image_id: string;
  seizure: number;
  bbox: [number, number, number, number];
  rotation: number;
  stage: string;
  legibility: string;
  kind: string;
  text: string | null;
  symbol_name: string | null;
  description: string | null;
  annotation_status: string;
  labels: LabelAssignment[];
}

export interface ReviewTask {
  task_id: string;
  marking_id: string;
  queue: QueueName;
  status: string;
  created_at: string;
  marking: MarkingView;
}

export interface SubmitResult {
  task_id: string;
  marking_id: string;
  status: string;
  assigned_label: string | null;
  corrected_text: string | null;
  reviewer: string;
  decided_at: string | null;
}

export interface SignatureGroupView {
  key: string;
  category: string;
  occurrences: Record<string, number>;
  total: number;
  recurring: boolean;
  example_marking_ids: string[];
}

export interface LinkView {
  seizures: number[];
  shared_signatures: string[];
  evidence_kind: string;
}
