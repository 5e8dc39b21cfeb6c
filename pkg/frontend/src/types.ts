/**
 * Wire types of the annotation service API. The UI never invents labels:
 * the legal label set is derived solely from the task's mode field.
 */

export type TaskMode = 'caption' | 'video';

export type Label = 'Correct' | 'Hallucination' | 'Saliency';

export interface Task {
  task_id: string;
  index: number;
  clause_id: string;
  layer: string;
  mode: TaskMode;
  fact_text: string;
  fact: Record<string, string>;
  caption: string | null;
  frames: string[];
}

export interface NextTaskResponse {
  task: Task | null;
  completed: number;
  total: number;
}

export interface SubmitResponse {
  ok: boolean;
  task_id: string;
  annotator: string;
  label: string;
  seq: number;
}

export interface ProgressResponse {
  total_tasks: number;
  judgments: number;
  annotators: Record<string, { completed: number; total: number }>;
}

export function legalLabelsFor(mode: TaskMode): Label[] {
  return mode === 'video'
    ? ['Correct', 'Hallucination', 'Saliency']
    : ['Correct', 'Hallucination'];
}
