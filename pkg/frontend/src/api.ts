/**
 * Thin client for the documented annotation-service HTTP API.
 *
 * A non-2xx response with a JSON `detail` field (the service's validation
 * errors, e.g. Saliency on a caption task) raises ApiError carrying the
 * status and the server's message so the view can surface it verbatim.
 * Network-level failures reject with the underlying error, which the
 * session layer treats as a connectivity problem (queue and retry).
 */

import type { NextTaskResponse, ProgressResponse, SubmitResponse } from './types';

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (typeof body.detail === 'string') detail = body.detail;
        else if (body.detail) detail = JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  nextTask(annotator: string): Promise<NextTaskResponse> {
    const query = new URLSearchParams({ annotator });
    return this.request<NextTaskResponse>(`/api/tasks/next?${query}`);
  }

  submitJudgment(taskId: string, annotator: string, label: string): Promise<SubmitResponse> {
    return this.request<SubmitResponse>('/api/judgments', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ task_id: taskId, annotator, label }),
    });
  }

  progress(): Promise<ProgressResponse> {
    return this.request<ProgressResponse>('/api/progress');
  }

  frameUrl(frameId: string): string {
    return `${this.baseUrl}/frames/${frameId}`;
  }
}
