/**
 * Entry point: token screen, then the annotation loop. The token is the
 * only thing kept client-side; progress always comes from the server.
 */

import { ApiClient } from './api';
import { bindHotkeys } from './hotkeys';
import { Session } from './session';
import type { Label } from './types';
import { View } from './view';

const TOKEN_KEY = 'dualfact.annotator';

function tokenScreen(root: HTMLElement, onToken: (token: string) => void): void {
  root.replaceChildren();
  const box = document.createElement('div');
  box.className = 'token-box';
  const title = document.createElement('h2');
  title.textContent = 'dualfact annotation';
  const input = document.createElement('input');
  input.type = 'text';
  input.placeholder = 'annotator token';
  const button = document.createElement('button');
  button.textContent = 'Start';
  button.addEventListener('click', () => {
    const token = input.value.trim();
    if (token) onToken(token);
  });
  input.addEventListener('keydown', (event) => {
    if (event.key === 'Enter') button.click();
  });
  box.append(title, input, button);
  root.appendChild(box);
}

export function start(root: HTMLElement): void {
  const api = new ApiClient('');

  const run = (token: string) => {
    window.localStorage.setItem(TOKEN_KEY, token);
    const session = new Session(api, token);
    const view = new View(root, api, {
      onLabel: (label: Label) => void session.submit(label),
      onBack: () => session.back(),
      onRetry: () => {
        if (session.pendingCount > 0) void session.flush();
        else void session.loadNext();
      },
    });
    session.subscribe((state) => view.render(state, session.canGoBack));
    bindHotkeys(window, {
      onLabel: (index) => {
        const labels = view.visibleLabels();
        if (index < labels.length) void session.submit(labels[index]);
      },
      onBack: () => session.back(),
    });
    void session.loadNext();
  };

  const saved = window.localStorage.getItem(TOKEN_KEY);
  if (saved) run(saved);
  else tokenScreen(root, run);
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  start(document.getElementById('app') as HTMLElement);
}
