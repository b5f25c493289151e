// Review session state machine: one active task at a time, decisions
// must reach the server before the queue advances. Kept free of DOM so
// the workflow rules are unit-testable.

import { ConflictError, type LabelSubmission, type ReviewApi } from "./api.js";
import type { QueueName, ReviewTask, Rotation } from "./types.js";

export type SubmitOutcome = "done" | "conflict" | "invalid";

const ROTATIONS: Rotation[] = [0, 90, 180, 270];

export class ReviewSession {
  tasks: ReviewTask[] = [];
  rotation: Rotation = 0;
  completed = 0;
  notice: string | null = null;

  constructor(
    private readonly api: Pick<ReviewApi, "fetchQueue" | "submit">,
    readonly queue: QueueName,
    readonly reviewer: string,
    private readonly limit = 50,
  ) {}

  get current(): ReviewTask | null {
    return this.tasks.length ? this.tasks[0] : null;
  }

  get remaining(): number {
    return this.tasks.length;
  }

  async load(seizure?: number): Promise<void> {
    this.tasks = await this.api.fetchQueue(this.queue, { seizure, limit: this.limit });
    this.rotation = 0;
  }

  rotate(): Rotation {
    const next = ROTATIONS[(ROTATIONS.indexOf(this.rotation) + 1) % ROTATIONS.length];
    this.rotation = next;
    return next;
  }

  /** A decision needs a label or an explicit skip; empty input submits nothing. */
  canSubmit(label: string): boolean {
    return label.trim().length > 0;
  }

  async submitLabel(label: string): Promise<SubmitOutcome> {
    if (!this.canSubmit(label)) {
      return "invalid";
    }
    return this.decide({
      task_id: this.mustCurrent().task_id,
      reviewer: this.reviewer,
      label: label.trim(),
    });
  }

  async skip(): Promise<SubmitOutcome> {
    return this.decide({
      task_id: this.mustCurrent().task_id,
      reviewer: this.reviewer,
      skip: true,
    });
  }

  /** Illegible adjudication: the reviewer confirms the backend verdict. */
  async confirmIllegible(): Promise<SubmitOutcome> {
    return this.decide({
      task_id: this.mustCurrent().task_id,
      reviewer: this.reviewer,
      label: "illegible",
    });
  }

  /** Illegible adjudication: corrected text flips the marking to legible. */
  async submitCorrectedText(text: string): Promise<SubmitOutcome> {
    if (!this.canSubmit(text)) {
      return "invalid";
    }
    return this.decide({
      task_id: this.mustCurrent().task_id,
      reviewer: this.reviewer,
      corrected_text: text.trim(),
    });
  }

  private mustCurrent(): ReviewTask {
    const task = this.current;
    if (!task) {
      throw new Error("no active task");
    }
    return task;
  }

  private async decide(submission: LabelSubmission): Promise<SubmitOutcome> {
    try {
      await this.api.submit(submission);
    } catch (error) {
      if (error instanceof ConflictError) {
        // Someone else decided this task; reload rather than lose state.
        this.notice = `Task already decided elsewhere (${error.message}); queue refreshed.`;
        await this.load();
        return "conflict";
      }
      throw error;
    }
    this.notice = null;
    this.completed += 1;
    this.tasks.shift();
    this.rotation = 0;
    return "done";
  }
}
