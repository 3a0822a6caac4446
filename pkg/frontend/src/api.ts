/** Typed client for the flowsmith HTTP API. The UI holds no business
 * logic of its own: validation, grading, and wiring all live server-side. */

export interface Question {
  id: string;
  kind: 'goal_clarification' | 'requirements_exploration' | 'disambiguation';
  text: string;
}

export interface AssistantTurn {
  message: string;
  questions: Question[];
  coverage_hint: 'low' | 'medium' | 'high';
}

export interface SessionDoc {
  id: string;
  status: 'chatting' | 'generating' | 'done';
  turns: AssistantTurn[];
  flow_ids: string[];
  state: { history: Array<{ role: string; content: string }> };
}

export interface JobDoc {
  id: string;
  session_id: string;
  phase: 'planning' | 'generating' | 'connecting' | 'reviewing' | 'done' | 'failed';
  current: number;
  total: number;
  flow_id: string | null;
  error: string | null;
}

export interface ModelRefDoc {
  provider: string;
  model: string;
  temperature?: number | null;
}

export interface NodeDoc {
  id: string;
  kind: 'TextFields' | 'Prompt' | 'CodeEvaluator' | 'LLMScorer' | 'Vis';
  title: string;
  x: number;
  y: number;
  payload: Record<string, unknown>;
}

export interface EdgeDoc {
  from_node: string;
  from_handle: string;
  to_node: string;
  to_handle: string;
}

export interface FlowDoc {
  schema_version: number;
  id: string;
  name: string;
  created_at: string;
  provenance: string;
  allow_unbound: boolean;
  nodes: NodeDoc[];
  edges: EdgeDoc[];
}

export interface ResponseRowDoc {
  instance: {
    final_text: string;
    model: { provider: string; model: string };
    bindings: Record<string, { value: string; template: string; source: string }>;
  };
  sample_index: number;
  text: string;
}

export interface AggregateRowDoc {
  group: string;
  value: number;
  count: number;
}

export interface RunDoc {
  id: string;
  flow_id: string;
  status: 'running' | 'succeeded' | 'failed';
  error?: string;
  result: {
    responses: Record<string, ResponseRowDoc[]>;
    scores: Record<string, Array<{ value: boolean | number | string; response_text: string; model: string }>>;
    tables: Record<string, AggregateRowDoc[]>;
    status: string;
    failed_node: string | null;
  } | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = '') {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = JSON.stringify(JSON.parse(text).detail ?? text);
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  createSession(): Promise<SessionDoc> {
    return this.request('POST', '/sessions');
  }

  getSession(id: string): Promise<SessionDoc> {
    return this.request('GET', `/sessions/${id}`);
  }

  sendMessage(sessionId: string, text: string): Promise<AssistantTurn> {
    return this.request('POST', `/sessions/${sessionId}/messages`, { text });
  }

  sendAnswers(
    sessionId: string,
    answers: Array<{ question_id: string; question: string; answer: string }>,
  ): Promise<AssistantTurn> {
    return this.request('POST', `/sessions/${sessionId}/messages`, { answers });
  }

  generate(sessionId: string): Promise<JobDoc> {
    return this.request('POST', `/sessions/${sessionId}/generate`);
  }

  getJob(id: string): Promise<JobDoc> {
    return this.request('GET', `/jobs/${id}`);
  }

  cancelJob(id: string): Promise<unknown> {
    return this.request('DELETE', `/jobs/${id}`);
  }

  getFlow(id: string): Promise<FlowDoc> {
    return this.request('GET', `/flows/${id}`);
  }

  putFlow(id: string, doc: FlowDoc): Promise<FlowDoc> {
    return this.request('PUT', `/flows/${id}`, doc);
  }

  startRun(flowId: string): Promise<RunDoc> {
    return this.request('POST', `/flows/${flowId}/run`);
  }

  getRun(id: string): Promise<RunDoc> {
    return this.request('GET', `/runs/${id}`);
  }
}
