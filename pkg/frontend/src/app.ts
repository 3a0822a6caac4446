/** Wires chat, stepper, canvas, and inspector to the service API. */

import { ApiClient, ApiError, type FlowDoc, type JobDoc, type RunDoc } from './api.js';
import { ChatPanel } from './chat.js';
import { FlowCanvas } from './canvas.js';
import { JobStepper } from './stepper.js';
import { RunInspector } from './inspector.js';

export class App {
  readonly chat: ChatPanel;
  readonly stepper: JobStepper;
  readonly canvas: FlowCanvas;
  readonly inspector: RunInspector;
  private sessionId: string | null = null;
  private activeFlowId: string | null = null;
  private runButton: HTMLButtonElement;

  constructor(
    root: HTMLElement,
    private api: ApiClient,
    private pollMs = 500,
  ) {
    root.innerHTML = `
      <aside class="left-pane"><div id="chat"></div></aside>
      <main class="right-pane">
        <div class="toolbar">
          <div id="stepper"></div>
          <button id="run-flow" data-testid="run-flow" type="button" hidden>Run flow</button>
        </div>
        <div id="canvas"></div>
        <div id="inspector"></div>
      </main>`;
    this.chat = new ChatPanel(root.querySelector('#chat')!, {
      onSend: (text) => void this.sendText(text),
      onSubmitAnswers: (answers) => void this.sendAnswers(answers),
      onGenerate: () => void this.generate(),
    });
    this.stepper = new JobStepper(root.querySelector('#stepper')!);
    this.canvas = new FlowCanvas(root.querySelector('#canvas')!, {
      onDocumentEdit: (doc) => void this.saveFlow(doc),
    });
    this.inspector = new RunInspector(root.querySelector('#inspector')!);
    this.runButton = root.querySelector('#run-flow')!;
    this.runButton.addEventListener('click', () => void this.runFlow());
  }

  async start(): Promise<void> {
    const session = await this.api.createSession();
    this.sessionId = session.id;
  }

  private async sendText(text: string): Promise<void> {
    if (!this.sessionId) return;
    try {
      const turn = await this.api.sendMessage(this.sessionId, text);
      this.chat.addAssistantTurn(turn);
    } catch (error) {
      this.chat.showError(this.describe(error));
    }
  }

  private async sendAnswers(
    answers: Array<{ question_id: string; question: string; answer: string }>,
  ): Promise<void> {
    if (!this.sessionId) return;
    try {
      const turn = await this.api.sendAnswers(this.sessionId, answers);
      this.chat.addAssistantTurn(turn);
    } catch (error) {
      this.chat.showError(this.describe(error));
    }
  }

  /** Generate (or regenerate) a flow for the current session. */
  async generate(): Promise<JobDoc | null> {
    if (!this.sessionId) return null;
    this.chat.setJobActive(true);
    try {
      const job = await this.api.generate(this.sessionId);
      const finished = await this.stepper.track(this.api, job.id, this.pollMs);
      if (finished.phase === 'done' && finished.flow_id) {
        await this.loadFlow(finished.flow_id);
      }
      return finished;
    } catch (error) {
      this.stepper.render({
        id: '',
        session_id: this.sessionId,
        phase: 'failed',
        current: 0,
        total: 0,
        flow_id: null,
        error: this.describe(error),
      });
      return null;
    } finally {
      // chat re-enables after done or failure so the user can continue
      this.chat.setJobActive(false);
    }
  }

  async loadFlow(flowId: string): Promise<void> {
    const doc = await this.api.getFlow(flowId);
    this.activeFlowId = flowId;
    this.canvas.render(doc);
    this.runButton.hidden = false;
  }

  private async saveFlow(doc: FlowDoc): Promise<void> {
    if (!this.activeFlowId) return;
    try {
      const saved = await this.api.putFlow(this.activeFlowId, doc);
      this.canvas.render(saved);
    } catch (error) {
      this.chat.showError(`edit rejected: ${this.describe(error)}`);
      if (this.activeFlowId) await this.loadFlow(this.activeFlowId);
    }
  }

  async runFlow(): Promise<RunDoc | null> {
    if (!this.activeFlowId || !this.canvas.document) return null;
    try {
      const started = await this.api.startRun(this.activeFlowId);
      let run = started;
      let stale = false;
      while (run.status === 'running') {
        await new Promise((resolve) => setTimeout(resolve, this.pollMs));
        try {
          run = await this.api.getRun(started.id);
          if (stale) {
            stale = false;
            this.inspector.root.classList.remove('stale');
          }
        } catch {
          stale = true;
          this.inspector.root.classList.add('stale');
        }
      }
      this.inspector.render(run, this.canvas.document);
      return run;
    } catch (error) {
      this.chat.showError(this.describe(error));
      return null;
    }
  }

  private describe(error: unknown): string {
    if (error instanceof ApiError) return `${error.status}: ${error.message}`;
    return String(error);
  }
}
