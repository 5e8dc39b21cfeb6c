/**
 * DOM rendering. The fact string is set via textContent, byte-equal to the
 * service payload; the label buttons come from the task's mode alone.
 */

import { ApiClient } from './api';
import type { SessionState } from './session';
import { legalLabelsFor, type Label, type Task } from './types';

export interface ViewCallbacks {
  onLabel: (label: Label) => void;
  onBack: () => void;
  onRetry: () => void;
}

export class View {
  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly callbacks: ViewCallbacks,
  ) {}

  /** Labels of the currently visible buttons, in display order. */
  visibleLabels(): Label[] {
    return Array.from(this.root.querySelectorAll<HTMLButtonElement>('button.label')).map(
      (b) => b.dataset.label as Label,
    );
  }

  render(state: SessionState, canGoBack: boolean): void {
    this.root.replaceChildren();
    const banner = this.renderBanner(state);
    if (banner) this.root.appendChild(banner);

    if (state.status === 'loading' || state.status === 'idle') {
      this.root.appendChild(el('p', 'status', 'Loading…'));
      return;
    }
    if (state.status === 'error') {
      const retry = el('button', 'retry', 'Retry');
      retry.addEventListener('click', () => this.callbacks.onRetry());
      this.root.appendChild(el('p', 'status', 'Could not reach the annotation service.'));
      this.root.appendChild(retry);
      return;
    }
    if (state.status === 'done' || state.current === null) {
      this.root.appendChild(el('h2', 'done-title', 'All tasks complete'));
      this.root.appendChild(
        el('p', 'done-note', `You judged ${state.completed} of ${state.total} facts. Thank you!`),
      );
      return;
    }
    this.renderTask(state, state.current, canGoBack);
  }

  private renderBanner(state: SessionState): HTMLElement | null {
    if (!state.online) {
      const banner = el('div', 'banner offline', 'Offline: judgments are queued and will be sent in order.');
      const retry = el('button', 'retry-flush', 'Retry now');
      retry.addEventListener('click', () => this.callbacks.onRetry());
      banner.appendChild(retry);
      return banner;
    }
    if (state.lastError) {
      return el('div', 'banner error', `Rejected: ${state.lastError}`);
    }
    return null;
  }

  private renderTask(state: SessionState, task: Task, canGoBack: boolean): void {
    this.root.appendChild(
      el('p', 'progress', `Task ${state.completed + 1} of ${state.total} · ${task.layer} · ${task.mode} evidence`),
    );

    const factBox = el('div', 'fact');
    const factText = el('span', 'fact-text', '');
    factText.textContent = task.fact_text; // verbatim, no rewriting
    factBox.appendChild(el('span', 'fact-caption', 'Is this fact supported?'));
    factBox.appendChild(factText);
    this.root.appendChild(factBox);

    this.root.appendChild(
      task.mode === 'caption' ? this.renderCaption(task) : this.renderFrames(task),
    );

    const buttons = el('div', 'labels');
    legalLabelsFor(task.mode).forEach((label, i) => {
      const button = el('button', 'label', `${label} (${i + 1})`);
      button.dataset.label = label;
      button.addEventListener('click', () => this.callbacks.onLabel(label));
      buttons.appendChild(button);
    });
    this.root.appendChild(buttons);

    const back = el('button', 'back', '← Back (b)');
    back.disabled = !canGoBack;
    back.addEventListener('click', () => this.callbacks.onBack());
    this.root.appendChild(back);
  }

  private renderCaption(task: Task): HTMLElement {
    const panel = el('div', 'evidence caption-evidence');
    panel.appendChild(el('h3', 'evidence-title', 'Gold caption'));
    const text = el('blockquote', 'caption-text', '');
    text.textContent = task.caption ?? '';
    panel.appendChild(text);
    return panel;
  }

  private renderFrames(task: Task): HTMLElement {
    const panel = el('div', 'evidence video-evidence');
    panel.appendChild(el('h3', 'evidence-title', 'Video frames'));
    const strip = el('div', 'frame-strip');
    for (const frameId of task.frames) {
      const img = document.createElement('img');
      img.className = 'frame';
      img.src = this.api.frameUrl(frameId);
      img.alt = frameId;
      img.addEventListener('click', () => img.classList.toggle('zoomed'));
      strip.appendChild(img);
    }
    panel.appendChild(strip);
    return panel;
  }
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}
