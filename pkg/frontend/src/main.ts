/** DOM layer: renders the stimulus queue and wires user events into the
 * session controller. All study logic lives in controller.ts. */

import { StudyApi } from "./api";
import { SessionController } from "./controller";
import { LocalProgressStore, loadRaterId, saveRaterId } from "./storage";

const ROLE_ORDER = ["input", "explanation", "complement"];

function sortedRoles(audio: Record<string, string>): string[] {
  const known = ROLE_ORDER.filter((role) => role in audio);
  const extra = Object.keys(audio).filter((role) => !ROLE_ORDER.includes(role)).sort();
  return [...known, ...extra];
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

function renderRetry(root: HTMLElement, retry: () => void): void {
  root.replaceChildren();
  const banner = el("div", "banner error-banner");
  banner.appendChild(el("p", undefined, "The study service is not reachable."));
  const button = el("button", undefined, "Retry");
  button.onclick = retry;
  banner.appendChild(button);
  root.appendChild(banner);
}

function render(root: HTMLElement, controller: SessionController, api: StudyApi): void {
  root.replaceChildren();

  const header = el("header");
  header.appendChild(el("h1", undefined, "Listening study"));
  header.appendChild(
    el(
      "p",
      "instructions",
      "For each clip set below: listen, then rate how well the explanation " +
        "reflects the sound the label refers to, from 1 (not at all) to 100 " +
        "(perfectly). Submit each rating once.",
    ),
  );
  const progressText = el("p", "progress");
  header.appendChild(progressText);
  root.appendChild(header);

  const thanks = el("div", "banner thanks");
  thanks.appendChild(el("h2", undefined, "All done, thank you!"));
  thanks.appendChild(el("p", undefined, "Every stimulus has been rated. You can close this tab."));
  thanks.hidden = true;
  root.appendChild(thanks);

  const refreshers: Array<() => void> = [];
  const refresh = () => {
    const p = controller.progress();
    progressText.textContent = `Progress: ${p.submitted} of ${p.total} rated (${Math.round(
      p.fraction * 100,
    )}%)`;
    thanks.hidden = !controller.isComplete();
    for (const update of refreshers) {
      update();
    }
  };

  const list = el("main");
  controller.stimulusIds().forEach((id, index) => {
    const info = controller.info(id);
    const card = el("section", "card");
    card.appendChild(el("h2", undefined, `Stimulus ${index + 1}`));
    card.appendChild(el("p", "method", `Method: ${info.method_label}`));

    for (const role of sortedRoles(info.audio)) {
      const row = el("div", "audio-row");
      row.appendChild(el("label", undefined, role));
      const player = el("audio");
      player.controls = true;
      player.preload = "none";
      player.src = api.audioUrl(info.audio[role]!);
      player.addEventListener("play", () => {
        controller.markPlayed(id);
        refresh();
      });
      row.appendChild(player);
      card.appendChild(row);
    }

    const sliderRow = el("div", "slider-row");
    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.min = "1";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(controller.score(id));
    const value = el("output", undefined, slider.value);
    slider.addEventListener("input", () => {
      controller.setScore(id, Number(slider.value));
      refresh();
    });
    sliderRow.appendChild(slider);
    sliderRow.appendChild(value);
    card.appendChild(sliderRow);

    const submit = el("button", "submit", "Submit rating");
    submit.onclick = async () => {
      await controller.submit(id);
      refresh();
    };
    card.appendChild(submit);
    const note = el("p", "note");
    card.appendChild(note);

    refreshers.push(() => {
      slider.value = String(controller.score(id));
      value.textContent = slider.value;
      const status = controller.status(id);
      slider.disabled = status !== "pending";
      submit.disabled = !controller.canSubmit(id);
      const error = controller.errorMessage(id);
      if (status === "submitted") {
        note.textContent = "Submitted.";
        note.className = "note ok";
      } else if (error) {
        note.textContent = error;
        note.className = "note error";
      } else if (!controller.played(id)) {
        note.textContent = "Play the audio to enable submission.";
        note.className = "note";
      } else {
        note.textContent = "";
        note.className = "note";
      }
    });
    list.appendChild(card);
  });
  root.appendChild(list);
  refresh();
}

async function boot(root: HTMLElement): Promise<void> {
  const api = new StudyApi("");
  let session;
  try {
    session = await api.startSession(loadRaterId(window.localStorage) ?? undefined);
  } catch {
    renderRetry(root, () => void boot(root));
    return;
  }
  saveRaterId(window.localStorage, session.rater_id);
  const store = new LocalProgressStore(session.rater_id, window.localStorage);
  render(root, new SessionController(session, api, store), api);
}

const root = document.querySelector<HTMLElement>("#app");
if (root) {
  void boot(root);
}
