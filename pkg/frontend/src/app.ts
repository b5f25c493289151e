// DOM wiring: labeling queue, illegible adjudication, signature browser.
// Keyboard-first: reviewers process hundreds of crops per seizure.

import { ReviewApi } from "./api.js";
import { ReviewSession } from "./session.js";
import type { LinkView, MarkingView, SignatureGroupView } from "./types.js";

const api = new ReviewApi();

type ViewName = "labeling" | "illegible" | "signatures";

function el<T extends HTMLElement = HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function reviewerName(): string {
  const stored = window.localStorage.getItem("tuskmark-reviewer");
  if (stored) return stored;
  const name = window.prompt("Reviewer id (initials):", "reviewer") || "reviewer";
  window.localStorage.setItem("tuskmark-reviewer", name);
  return name;
}

function markingSummary(marking: MarkingView): string {
  const lines = [
    `<dt>seizure</dt><dd>${marking.seizure}</dd>`,
    `<dt>image</dt><dd>${escapeHtml(marking.image_id)}</dd>`,
    `<dt>stage</dt><dd>${escapeHtml(marking.stage)}</dd>`,
    `<dt>legibility</dt><dd>${escapeHtml(marking.legibility)}</dd>`,
  ];
  if (marking.text) lines.push(`<dt>text</dt><dd>${escapeHtml(marking.text)}</dd>`);
  if (marking.symbol_name)
    lines.push(`<dt>symbol</dt><dd>${escapeHtml(marking.symbol_name)}</dd>`);
  if (marking.labels.length) {
    const labels = marking.labels
      .map((a) => `${escapeHtml(a.label)} (${a.source} ${a.probability.toFixed(2)})`)
      .join(", ");
    lines.push(`<dt>labels</dt><dd>${labels}</dd>`);
  }
  return `<dl>${lines.join("")}</dl>`;
}

class LabelingView {
  readonly session: ReviewSession;
  private suggestions: string[] = [];

  constructor(reviewer: string) {
    this.session = new ReviewSession(api, "initial_labeling", reviewer);
  }

  async start(): Promise<void> {
    this.suggestions = await api.fetchVocabulary();
    await this.session.load();
    this.render();
  }

  private hotkeyLabels(): string[] {
    return this.suggestions.slice(0, 9);
  }

  render(): void {
    const task = this.session.current;
    el("labeling-progress").textContent =
      `${this.session.completed} done · ${this.session.remaining} in queue`;
    el("labeling-notice").textContent = this.session.notice ?? "";
    const panel = el("labeling-task");
    if (!task) {
      panel.innerHTML = `<p class="empty">Queue empty — nothing waiting for labels.</p>`;
      return;
    }
    const datalist = this.suggestions
      .map((label) => `<option value="${escapeHtml(label)}"></option>`)
      .join("");
    const hotkeys = this.hotkeyLabels()
      .map((label, i) => `<span class="hotkey"><kbd>${i + 1}</kbd> ${escapeHtml(label)}</span>`)
      .join(" ");
    panel.innerHTML = `
      <div class="crop-box">
        <img id="labeling-crop" alt="marking crop"
             src="${api.cropUrl(task.marking_id, this.session.rotation)}" />
        <div class="crop-tools">rotation ${this.session.rotation}° <kbd>r</kbd></div>
      </div>
      <div class="task-side">
        ${markingSummary(task.marking)}
        <input id="label-input" list="label-suggestions" placeholder="group label"
               autocomplete="off" />
        <datalist id="label-suggestions">${datalist}</datalist>
        <div class="buttons">
          <button id="label-submit" disabled>submit <kbd>enter</kbd></button>
          <button id="label-skip">skip <kbd>s</kbd></button>
        </div>
        <div class="hotkeys">${hotkeys}</div>
      </div>`;
    const input = el<HTMLInputElement>("label-input");
    const submit = el<HTMLButtonElement>("label-submit");
    input.addEventListener("input", () => {
      submit.disabled = !this.session.canSubmit(input.value);
    });
    submit.addEventListener("click", () => void this.submit(input.value));
    el("label-skip").addEventListener("click", () => void this.skip());
    input.focus();
  }

  private async submit(label: string): Promise<void> {
    const outcome = await this.session.submitLabel(label);
    if (outcome !== "invalid") this.render();
  }

  private async skip(): Promise<void> {
    await this.session.skip();
    this.render();
  }

  async handleKey(event: KeyboardEvent): Promise<void> {
    const input = document.getElementById("label-input") as HTMLInputElement | null;
    const typing = document.activeElement === input && input !== null;
    if (event.key === "Enter" && input) {
      const outcome = await this.session.submitLabel(input.value);
      if (outcome !== "invalid") this.render();
      return;
    }
    if (typing) return; // free-typing a label: leave letters alone
    if (event.key === "r") {
      this.session.rotate();
      this.render();
    } else if (event.key === "s") {
      await this.session.skip();
      this.render();
    } else if (/^[1-9]$/.test(event.key)) {
      const label = this.hotkeyLabels()[Number(event.key) - 1];
      if (label) {
        const outcome = await this.session.submitLabel(label);
        if (outcome !== "invalid") this.render();
      }
    }
  }
}

class IllegibleView {
  readonly session: ReviewSession;

  constructor(reviewer: string) {
    this.session = new ReviewSession(api, "illegible_review", reviewer);
  }

  async start(): Promise<void> {
    await this.session.load();
    this.render();
  }

  render(): void {
    const task = this.session.current;
    el("illegible-progress").textContent =
      `${this.session.completed} done · ${this.session.remaining} in queue`;
    el("illegible-notice").textContent = this.session.notice ?? "";
    const panel = el("illegible-task");
    if (!task) {
      panel.innerHTML = `<p class="empty">Queue empty — no illegible markings await adjudication.</p>`;
      return;
    }
    const marking = task.marking;
    const transcript = [
      `backend verdict: ${escapeHtml(marking.annotation_status)} / ${escapeHtml(marking.legibility)}`,
      marking.text ? `text: ${escapeHtml(marking.text)}` : null,
      marking.description ? `description: ${escapeHtml(marking.description)}` : null,
    ]
      .filter((line): line is string => line !== null)
      .join("<br>");
    panel.innerHTML = `
      <div class="crop-box">
        <img alt="marking crop" src="${api.cropUrl(task.marking_id, this.session.rotation)}" />
        <div class="crop-tools">rotation ${this.session.rotation}° <kbd>r</kbd></div>
      </div>
      <div class="task-side">
        <div class="transcript">${transcript}</div>
        ${markingSummary(marking)}
        <div class="buttons">
          <button id="confirm-illegible">confirm illegible <kbd>i</kbd></button>
        </div>
        <input id="corrected-text" placeholder="corrected text (if readable)"
               autocomplete="off" />
        <div class="buttons">
          <button id="corrected-submit" disabled>save corrected text <kbd>enter</kbd></button>
        </div>
      </div>`;
    const input = el<HTMLInputElement>("corrected-text");
    const save = el<HTMLButtonElement>("corrected-submit");
    input.addEventListener("input", () => {
      save.disabled = !this.session.canSubmit(input.value);
    });
    save.addEventListener("click", () => void this.correct(input.value));
    el("confirm-illegible").addEventListener("click", () => void this.confirm());
  }

  private async confirm(): Promise<void> {
    await this.session.confirmIllegible();
    this.render();
  }

  private async correct(text: string): Promise<void> {
    const outcome = await this.session.submitCorrectedText(text);
    if (outcome !== "invalid") this.render();
  }

  async handleKey(event: KeyboardEvent): Promise<void> {
    const input = document.getElementById("corrected-text") as HTMLInputElement | null;
    const typing = document.activeElement === input && input !== null;
    if (event.key === "Enter" && input && this.session.canSubmit(input.value)) {
      await this.correct(input.value);
      return;
    }
    if (typing) return;
    if (event.key === "i") {
      await this.confirm();
    } else if (event.key === "r") {
      this.session.rotate();
      this.render();
    }
  }
}

class SignatureBrowser {
  private groups: SignatureGroupView[] = [];
  private links: LinkView[] = [];
  private seizures: number[] = [];

  async start(): Promise<void> {
    [this.groups, this.links, this.seizures] = await Promise.all([
      api.fetchSignatures(),
      api.fetchLinks(),
      api.fetchSeizures(),
    ]);
    this.render();
  }

  render(): void {
    const matrix = el("signature-matrix");
    const recurring = this.groups.filter((g) => g.recurring);
    const header = this.seizures.map((s) => `<th>${s}</th>`).join("");
    const rows = recurring
      .map((g) => {
        const cells = this.seizures
          .map((s) => `<td>${g.occurrences[String(s)] ?? 0}</td>`)
          .join("");
        return `<tr data-key="${escapeHtml(g.key)}">
          <td class="key">${escapeHtml(g.key)}</td>
          <td class="category">${escapeHtml(g.category)}</td>${cells}
          <td class="total">${g.total}</td></tr>`;
      })
      .join("");
    matrix.innerHTML = `
      <table>
        <thead><tr><th>signature</th><th>category</th>${header}<th>total</th></tr></thead>
        <tbody>${rows}</tbody>
      </table>`;
    matrix.querySelectorAll("tr[data-key]").forEach((row) => {
      row.addEventListener("click", () => this.showExamples(row.getAttribute("data-key")!));
    });

    const linkPanel = el("signature-links");
    if (!this.links.length) {
      linkPanel.innerHTML = `<p class="empty">No cross-seizure links in this catalog.</p>`;
      return;
    }
    linkPanel.innerHTML = this.links
      .map((link) => {
        const evidence =
          link.evidence_kind === "xo_variant"
            ? escapeHtml(link.shared_signatures[0] ?? "X/O variant")
            : `${link.shared_signatures.length} shared signature marking` +
              (link.shared_signatures.length === 1 ? "" : "s");
        return `<div class="link-row"><span class="seizures">${link.seizures.join("+")}</span>
          <span>${evidence}</span></div>`;
      })
      .join("");
  }

  private showExamples(key: string): void {
    const group = this.groups.find((g) => g.key === key);
    const strip = el("signature-examples");
    if (!group) {
      strip.innerHTML = "";
      return;
    }
    strip.innerHTML =
      `<h3>${escapeHtml(group.key)}</h3>` +
      group.example_marking_ids
        .map((id) => `<img alt="example crop" src="${api.cropUrl(id)}" />`)
        .join("");
  }
}

async function boot(): Promise<void> {
  const reviewer = reviewerName();
  const labeling = new LabelingView(reviewer);
  const illegible = new IllegibleView(reviewer);
  const signatures = new SignatureBrowser();

  let active: ViewName = "labeling";
  const show = (view: ViewName) => {
    active = view;
    for (const name of ["labeling", "illegible", "signatures"] as ViewName[]) {
      el(`view-${name}`).classList.toggle("hidden", name !== view);
      el(`tab-${name}`).classList.toggle("active", name === view);
    }
  };
  el("tab-labeling").addEventListener("click", () => show("labeling"));
  el("tab-illegible").addEventListener("click", () => show("illegible"));
  el("tab-signatures").addEventListener("click", () => show("signatures"));

  document.addEventListener("keydown", (event) => {
    if (event.metaKey || event.ctrlKey || event.altKey) return;
    if (active === "labeling") void labeling.handleKey(event);
    else if (active === "illegible") void illegible.handleKey(event);
  });

  await Promise.all([labeling.start(), illegible.start(), signatures.start()]);
  show("labeling");
}

void boot();
