/**
 * Annotation session state machine. The server is the source of truth for
 * progress: a reload resumes wherever /api/tasks/next says.
 *
 * Submissions go through a FIFO queue with at most one in flight. A
 * network failure flips connectivity to offline and keeps the judgment at
 * the queue head; `flush()` retries in order. A 422 is not a connectivity
 * problem: the server's message is surfaced and the task does not advance.
 */

import { ApiClient, ApiError } from './api';
import type { Task } from './types';

export type SessionStatus = 'idle' | 'loading' | 'ready' | 'done' | 'error';

export interface SessionState {
  token: string;
  status: SessionStatus;
  current: Task | null;
  completed: number;
  total: number;
  online: boolean;
  lastError: string | null;
}

interface PendingSubmission {
  taskId: string;
  label: string;
}

type Listener = (state: SessionState) => void;

export class Session {
  private state: SessionState;
  private queue: PendingSubmission[] = [];
  private inflight = false;
  private history: Task[] = [];
  private listeners: Listener[] = [];

  constructor(
    private readonly api: ApiClient,
    token: string,
  ) {
    if (!token) throw new Error('annotator token required');
    this.state = {
      token,
      status: 'idle',
      current: null,
      completed: 0,
      total: 0,
      online: true,
      lastError: null,
    };
  }

  getState(): SessionState {
    return { ...this.state };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.getState());
  }

  /** Fetch and display the next unjudged task (or the completion state). */
  async loadNext(): Promise<void> {
    this.update({ status: 'loading', lastError: null });
    try {
      const body = await this.api.nextTask(this.state.token);
      if (this.state.current) this.pushHistory(this.state.current);
      this.update({
        status: body.task ? 'ready' : 'done',
        current: body.task,
        completed: body.completed,
        total: body.total,
        online: true,
      });
    } catch (error) {
      this.update({
        status: 'error',
        online: !(error instanceof TypeError),
        lastError: describe(error),
      });
    }
  }

  private pushHistory(task: Task): void {
    if (!this.history.some((t) => t.task_id === task.task_id)) {
      this.history.push(task);
    }
  }

  get canGoBack(): boolean {
    return this.history.length > 0;
  }

  /** Revisit the previously judged task; resubmission is latest-wins. */
  back(): void {
    const previous = this.history.pop();
    if (!previous) return;
    this.update({ status: 'ready', current: previous, lastError: null });
  }

  /**
   * Queue a judgment for the current task and pump the queue. The label is
   * sent as given; the view only offers mode-legal buttons, so an illegal
   * label here means someone forced it, and the server's 422 is surfaced.
   */
  async submit(label: string): Promise<void> {
    const task = this.state.current;
    if (!task) return;
    this.queue.push({ taskId: task.task_id, label });
    await this.flush();
  }

  /** Send queued submissions in order, one in flight at a time. */
  async flush(): Promise<void> {
    if (this.inflight) return;
    this.inflight = true;
    try {
      while (this.queue.length > 0) {
        const pending = this.queue[0];
        try {
          await this.api.submitJudgment(pending.taskId, this.state.token, pending.label);
        } catch (error) {
          if (error instanceof ApiError) {
            // server rejected the judgment: drop it, surface the message,
            // stay on the current task
            this.queue.shift();
            this.update({ status: 'ready', lastError: describe(error) });
            continue;
          }
          // connectivity problem: keep the submission queued for retry
          this.update({ online: false, lastError: describe(error) });
          return;
        }
        this.queue.shift();
        this.update({ online: true, lastError: null });
        await this.loadNext();
      }
    } finally {
      this.inflight = false;
    }
  }

  get pendingCount(): number {
    return this.queue.length;
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return error.message;
  if (error instanceof Error) return error.message;
  return String(error);
}
