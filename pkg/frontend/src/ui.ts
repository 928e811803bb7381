// DOM glue: a start form, the image pane with a slider plus exact numeric
// entry, a resume banner for interrupted sessions, and an export link.

import { RatingApi } from "./api.js";
import { MAX_SCORE, MIN_SCORE, RatingSession, Snapshot } from "./session.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class RatingView {
  private readonly root: HTMLElement;
  private readonly api: RatingApi;
  private session: RatingSession | null = null;
  private lastCritic = "";
  private lastBundle = "";

  constructor(root: HTMLElement, api: RatingApi) {
    this.root = root;
    this.api = api;
    this.renderStartForm();
  }

  private renderStartForm(): void {
    this.root.replaceChildren();
    const form = el("form", "start-form");
    const critic = el("input");
    critic.placeholder = "critic id";
    critic.name = "critic";
    critic.value = this.lastCritic;
    const bundle = el("input");
    bundle.placeholder = "bundle id";
    bundle.name = "bundle";
    bundle.value = this.lastBundle;
    const go = el("button", undefined, "start rating");
    go.type = "submit";
    form.append(critic, bundle, go);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const criticId = critic.value.trim();
      const bundleId = bundle.value.trim();
      if (!criticId || !bundleId) return;
      this.lastCritic = criticId;
      this.lastBundle = bundleId;
      this.session = new RatingSession(this.api, criticId, bundleId);
      this.session.subscribe((snap) => this.render(snap));
      void this.session.start();
    });
    this.root.append(form);
  }

  private render(snap: Snapshot): void {
    this.root.replaceChildren();
    switch (snap.phase) {
      case "starting":
      case "submitting":
        this.root.append(el("p", "status", "working..."));
        break;
      case "resumable":
        this.renderResumable(snap);
        break;
      case "rating":
        this.renderItem(snap);
        break;
      case "complete":
        this.renderComplete(snap);
        break;
      case "failed":
        this.root.append(el("p", "error", snap.error ?? "unknown failure"));
        this.root.append(this.backButton("try again"));
        break;
      default:
        this.renderStartForm();
    }
  }

  private renderResumable(snap: Snapshot): void {
    const session = this.session;
    if (session === null) return;
    this.root.append(
      el("p", "status", `${snap.criticId} already has a session on ${snap.bundleId}`),
    );
    const resume = el("button", undefined, "resume where you left off");
    resume.addEventListener("click", () => void session.resume());
    this.root.append(resume, this.backButton("back"));
  }

  private renderItem(snap: Snapshot): void {
    const session = this.session;
    if (session === null || snap.item === null) return;

    const progress = el("p", "progress", `image ${snap.rated + 1} of ${snap.total}`);
    // shown at native size on purpose: stitching defects vanish under scaling
    const img = el("img", "stitched");
    img.src = session.currentImageUrl() ?? "";
    img.alt = snap.item.image_id;

    const form = el("form", "score-form");
    const slider = el("input");
    slider.type = "range";
    slider.min = String(MIN_SCORE);
    slider.max = String(MAX_SCORE);
    slider.step = "0.5";
    const exact = el("input");
    exact.type = "number";
    exact.min = String(MIN_SCORE);
    exact.max = String(MAX_SCORE);
    exact.step = "any";
    exact.name = "score";
    exact.placeholder = `${MIN_SCORE}..${MAX_SCORE}`;
    const submit = el("button", undefined, "submit score");
    submit.type = "submit";

    // score starts unset; either control sets it and enables submit
    submit.disabled = true;
    slider.value = "50";
    if (snap.pendingScore !== null) {
      exact.value = String(snap.pendingScore);
      slider.value = String(snap.pendingScore);
      submit.disabled = false;
      submit.textContent = "retry submit";
    }
    slider.addEventListener("input", () => {
      exact.value = slider.value;
      submit.disabled = false;
    });
    exact.addEventListener("input", () => {
      if (exact.value !== "") slider.value = exact.value;
      submit.disabled = exact.value === "";
    });

    form.append(slider, exact, submit);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      if (exact.value === "") return;
      void session.submit(Number(exact.value));
    });

    this.root.append(progress, img, form);
    if (snap.error) this.root.append(el("p", "error", snap.error));
    exact.focus();
  }

  private renderComplete(snap: Snapshot): void {
    this.root.append(el("p", "done", `all ${snap.total} images rated, thanks`));
    const link = el("a", "export", "download ratings csv");
    link.href = this.api.exportUrl(snap.bundleId);
    this.root.append(link, this.backButton("rate another bundle"));
  }

  private backButton(label: string): HTMLButtonElement {
    const btn = el("button", undefined, label);
    btn.addEventListener("click", () => {
      this.session = null;
      this.renderStartForm();
    });
    return btn;
  }
}
