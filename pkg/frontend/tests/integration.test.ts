// @vitest-environment jsdom
//
// End-to-end contract tests against the real annotation service: a fixture
// dataset is prepared with the package's CLI, the service is spawned per
// test group, and the UI's session + view drive it over real HTTP.
import { execFileSync, spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api';
import { Session } from '../src/session';
import { View } from '../src/view';
import type { Label } from '../src/types';

const REPO_ROOT = resolve(__dirname, '..', '..');
const FIXTURE = join(REPO_ROOT, 'tests', 'fixtures', 'youcook3_mini.jsonl');
const PYTHON = process.env.PYTHON ?? 'python3';

let workDir: string;
let datasetWithPredicted: string;

function startService(port: number, journal: string): Promise<ChildProcess> {
  const child = spawn(
    PYTHON,
    [
      '-m',
      'dualfact.cli',
      'serve',
      '--dataset',
      datasetWithPredicted,
      '--modes',
      'caption',
      '--layers',
      'conceptual',
      '--per-stratum',
      '3',
      '--seed',
      '5',
      '--journal',
      journal,
      '--port',
      String(port),
    ],
    { cwd: REPO_ROOT, stdio: ['ignore', 'pipe', 'pipe'] },
  );
  return new Promise((resolvePromise, rejectPromise) => {
    const deadline = Date.now() + 20_000;
    const poll = async () => {
      try {
        const response = await fetch(`http://127.0.0.1:${port}/api/progress`);
        if (response.ok) {
          resolvePromise(child);
          return;
        }
      } catch {
        // not up yet
      }
      if (Date.now() > deadline) {
        child.kill();
        rejectPromise(new Error('annotation service did not come up'));
        return;
      }
      setTimeout(poll, 250);
    };
    void poll();
  });
}

beforeAll(() => {
  workDir = mkdtempSync(join(tmpdir(), 'dualfact-ui-'));
  datasetWithPredicted = join(workDir, 'predicted.jsonl');
  execFileSync(
    PYTHON,
    [
      '-m',
      'dualfact.cli',
      'extract',
      FIXTURE,
      '--caption-source',
      'via_caption',
      '--out',
      datasetWithPredicted,
    ],
    { cwd: REPO_ROOT },
  );
});

afterAll(() => {
  rmSync(workDir, { recursive: true, force: true });
});

describe('UI contract against a fixture service (3 tasks)', () => {
  const port = 8431;
  let service: ChildProcess;
  let base: string;

  beforeAll(async () => {
    service = await startService(port, join(workDir, 'contract.jsonl'));
    base = `http://127.0.0.1:${port}`;
  }, 30_000);

  afterAll(() => {
    service.kill();
  });

  it(
    'completes the session, surfaces a forced 422, resumes after reload',
    async () => {
      const api = new ApiClient(base);
      const root = document.createElement('main');
      document.body.replaceChildren(root);

      let session = new Session(api, 'annotator-ui');
      let view = new View(root, api, {
        onLabel: (label: Label) => void session.submit(label),
        onBack: () => session.back(),
        onRetry: () => void session.loadNext(),
      });
      session.subscribe((state) => view.render(state, session.canGoBack));

      await session.loadNext();
      expect(session.getState().total).toBe(3);
      expect(view.visibleLabels()).toEqual(['Correct', 'Hallucination']);

      // judgment 1 through the UI
      await session.submit('Correct');
      expect(session.getState().completed).toBe(1);

      // forced illegal Saliency on a caption task: server 422 must be
      // visible in the DOM and the task must not advance
      const before = session.getState().current?.task_id;
      await session.submit('Saliency');
      const banner = root.querySelector('.banner.error');
      expect(banner).not.toBeNull();
      expect(banner?.textContent).toContain('Saliency');
      expect(session.getState().current?.task_id).toBe(before);

      // "page reload": fresh session against the same service, same token
      session = new Session(api, 'annotator-ui');
      view = new View(root, api, {
        onLabel: (label: Label) => void session.submit(label),
        onBack: () => session.back(),
        onRetry: () => void session.loadNext(),
      });
      session.subscribe((state) => view.render(state, session.canGoBack));
      await session.loadNext();
      expect(session.getState().completed).toBe(1); // resumed, not restarted

      await session.submit('Hallucination');
      await session.submit('Correct');
      expect(session.getState().status).toBe('done');
      expect(root.querySelector('.done-title')?.textContent).toContain('complete');

      // exactly 3 effective judgments are stored server-side
      const progress = await api.progress();
      expect(progress.annotators['annotator-ui'].completed).toBe(3);
      expect(progress.total_tasks).toBe(3);
    },
    30_000,
  );
});

describe('export parity: UI path vs direct API submissions', () => {
  const uiPort = 8432;
  const apiPort = 8433;
  let uiService: ChildProcess;
  let apiService: ChildProcess;

  beforeAll(async () => {
    uiService = await startService(uiPort, join(workDir, 'ui.jsonl'));
    apiService = await startService(apiPort, join(workDir, 'direct.jsonl'));
  }, 40_000);

  afterAll(() => {
    uiService.kill();
    apiService.kill();
  });

  it(
    'same labels yield the same export distribution',
    async () => {
      const labels: Label[] = ['Correct', 'Hallucination', 'Correct'];

      // path 1: through the UI session
      const uiApi = new ApiClient(`http://127.0.0.1:${uiPort}`);
      const session = new Session(uiApi, 'ann-parity');
      await session.loadNext();
      const uiTaskIds: string[] = [];
      for (const label of labels) {
        uiTaskIds.push(session.getState().current!.task_id);
        await session.submit(label);
      }
      expect(session.getState().status).toBe('done');

      // path 2: the same (task, label) pairs as raw API calls
      const apiBase = `http://127.0.0.1:${apiPort}`;
      for (let i = 0; i < labels.length; i++) {
        const response = await fetch(`${apiBase}/api/judgments`, {
          method: 'POST',
          headers: { 'Content-Type': 'application/json' },
          body: JSON.stringify({
            task_id: uiTaskIds[i], // same seed -> same deterministic task list
            annotator: 'ann-parity',
            label: labels[i],
          }),
        });
        expect(response.ok).toBe(true);
      }

      const uiExport = await (await fetch(`http://127.0.0.1:${uiPort}/api/export`)).json();
      const directExport = await (await fetch(`${apiBase}/api/export`)).json();
      expect(uiExport.distribution).toEqual(directExport.distribution);
      expect(uiExport.distribution.length).toBeGreaterThan(0);
      expect(uiExport.distribution[0].counts).toEqual({
        Correct: 2,
        Hallucination: 1,
        Saliency: 0,
      });
    },
    30_000,
  );
});
