/** Chat panel: transcript, per-question answer forms, generate button. */

import type { AssistantTurn, Question } from './api.js';

export interface ChatCallbacks {
  onSend(text: string): void;
  onSubmitAnswers(answers: Array<{ question_id: string; question: string; answer: string }>): void;
  onGenerate(): void;
}

const KIND_LABELS: Record<Question['kind'], string> = {
  goal_clarification: 'goal',
  requirements_exploration: 'requirements',
  disambiguation: 'disambiguation',
};

export class ChatPanel {
  readonly root: HTMLElement;
  private transcript: HTMLElement;
  private input: HTMLTextAreaElement;
  private sendButton: HTMLButtonElement;
  private generateButton: HTMLButtonElement;
  private coverageEl: HTMLElement;
  private hasUserMessage = false;
  private jobActive = false;

  constructor(root: HTMLElement, private callbacks: ChatCallbacks) {
    this.root = root;
    root.classList.add('chat-panel');
    root.innerHTML = `
      <div class="transcript" data-testid="transcript"></div>
      <div class="coverage" data-testid="coverage"></div>
      <div class="composer">
        <textarea data-testid="chat-input" rows="3"
          placeholder="Describe the pipeline you want to evaluate…"></textarea>
        <div class="composer-buttons">
          <button data-testid="send" type="button">Send</button>
          <button data-testid="generate" type="button" class="generate" disabled>Generate flow</button>
        </div>
      </div>`;
    this.transcript = root.querySelector('.transcript')!;
    this.coverageEl = root.querySelector('[data-testid="coverage"]')!;
    this.input = root.querySelector('[data-testid="chat-input"]')!;
    this.sendButton = root.querySelector('[data-testid="send"]')!;
    this.generateButton = root.querySelector('[data-testid="generate"]')!;
    this.sendButton.addEventListener('click', () => this.submitText());
    this.generateButton.addEventListener('click', () => this.callbacks.onGenerate());
  }

  private submitText(): void {
    const text = this.input.value.trim();
    if (!text) return;
    this.input.value = '';
    this.addUserMessage(text);
    this.callbacks.onSend(text);
  }

  addUserMessage(text: string): void {
    const el = document.createElement('div');
    el.className = 'msg user';
    el.textContent = text;
    this.transcript.appendChild(el);
    this.hasUserMessage = true;
    this.updateGenerateEnabled();
  }

  /** Render an assistant turn; questions become an inline form, each
   * answer individually optional. A zero-question turn is plain text. */
  addAssistantTurn(turn: AssistantTurn): void {
    const wrapper = document.createElement('div');
    wrapper.className = 'msg assistant';
    const message = document.createElement('div');
    message.className = 'assistant-text';
    message.textContent = turn.message;
    wrapper.appendChild(message);
    if (turn.questions.length > 0) {
      wrapper.appendChild(this.renderForm(turn.questions));
    }
    this.transcript.appendChild(wrapper);
    this.coverageEl.textContent = `context coverage: ${turn.coverage_hint}`;
  }

  private renderForm(questions: Question[]): HTMLElement {
    const form = document.createElement('form');
    form.className = 'question-form';
    form.setAttribute('data-testid', 'question-form');
    const inputs: Array<{ q: Question; field: HTMLInputElement }> = [];
    for (const q of questions) {
      const row = document.createElement('label');
      row.className = 'question-row';
      const badge = document.createElement('span');
      badge.className = `kind-badge kind-${q.kind}`;
      badge.textContent = KIND_LABELS[q.kind];
      const text = document.createElement('span');
      text.className = 'question-text';
      text.textContent = q.text; // verbatim, never truncated client-side
      const field = document.createElement('input');
      field.type = 'text';
      field.name = q.id;
      field.placeholder = 'optional answer';
      row.append(badge, text, field);
      form.appendChild(row);
      inputs.push({ q, field });
    }
    const submit = document.createElement('button');
    submit.type = 'submit';
    submit.textContent = 'Send answers';
    form.appendChild(submit);
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      const answered = inputs
        .filter(({ field }) => field.value.trim().length > 0)
        .map(({ q, field }) => ({ question_id: q.id, question: q.text, answer: field.value.trim() }));
      form.querySelectorAll('input,button').forEach((el) => ((el as HTMLInputElement).disabled = true));
      const summary = answered.map((a) => `${a.question} → ${a.answer}`).join('\n') || '(no answers)';
      this.addUserMessage(summary);
      this.callbacks.onSubmitAnswers(answered);
    });
    return form;
  }

  setJobActive(active: boolean): void {
    this.jobActive = active;
    this.input.disabled = active;
    this.sendButton.disabled = active;
    this.updateGenerateEnabled();
  }

  showError(message: string): void {
    const el = document.createElement('div');
    el.className = 'msg error';
    el.textContent = message;
    this.transcript.appendChild(el);
  }

  private updateGenerateEnabled(): void {
    // enabled only with >=1 user message and no active job
    this.generateButton.disabled = !this.hasUserMessage || this.jobActive;
  }
}
