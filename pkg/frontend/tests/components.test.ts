import { beforeEach, describe, expect, it, vi } from 'vitest';

import type { AssistantTurn, FlowDoc, JobDoc, RunDoc } from '../src/api.js';
import { ChatPanel } from '../src/chat.js';
import { FlowCanvas, checkFlowDoc, highlightTemplate, templateVariables } from '../src/canvas.js';
import { JobStepper } from '../src/stepper.js';
import { RunInspector } from '../src/inspector.js';

function fixtureFlow(): FlowDoc {
  return {
    schema_version: 1,
    id: 'flow-1',
    name: 'fixture',
    created_at: '2025-01-01T00:00:00Z',
    provenance: 'generated',
    allow_unbound: false,
    nodes: [
      { id: 'n1', kind: 'TextFields', title: 'persona', x: 80, y: 60, payload: { fields: ['a', 'b', 'c'] } },
      { id: 'n2', kind: 'TextFields', title: 'question', x: 80, y: 280, payload: { fields: ['q'] } },
      {
        id: 'n3',
        kind: 'Prompt',
        title: 'ask',
        x: 430,
        y: 60,
        payload: {
          template: 'You are {persona}. {question}',
          models: [
            { provider: 'openai', model: 'gpt-4o' },
            { provider: 'anthropic', model: 'claude-3-5-sonnet' },
          ],
          samples_per_prompt: 1,
        },
      },
      { id: 'n4', kind: 'CodeEvaluator', title: 'check', x: 780, y: 60, payload: { language: 'expr', program: 'len(response.text) > 0' } },
      { id: 'n5', kind: 'Vis', title: 'Results', x: 1130, y: 60, payload: { group_by: 'model', metric: 'pass_rate' } },
    ],
    edges: [
      { from_node: 'n1', from_handle: 'fields', to_node: 'n3', to_handle: 'persona' },
      { from_node: 'n2', from_handle: 'fields', to_node: 'n3', to_handle: 'question' },
      { from_node: 'n3', from_handle: 'responses', to_node: 'n4', to_handle: 'responses' },
      { from_node: 'n4', from_handle: 'responses', to_node: 'n5', to_handle: 'responses' },
    ],
  };
}

describe('chat panel forms', () => {
  let root: HTMLElement;
  let sent: string[];
  let submitted: Array<Array<{ question_id: string; question: string; answer: string }>>;
  let generated: number;
  let panel: ChatPanel;

  beforeEach(() => {
    document.body.innerHTML = '<div id="chat"></div>';
    root = document.getElementById('chat')!;
    sent = [];
    submitted = [];
    generated = 0;
    panel = new ChatPanel(root, {
      onSend: (text) => sent.push(text),
      onSubmitAnswers: (answers) => submitted.push(answers),
      onGenerate: () => generated++,
    });
  });

  function turn(questions: AssistantTurn['questions'], message = 'ok'): AssistantTurn {
    return { message, questions, coverage_hint: 'low' };
  }

  it('renders one labeled input per question with kind badges', () => {
    panel.addAssistantTurn(
      turn([
        { id: 'q1', kind: 'goal_clarification', text: 'What is the goal?' },
        { id: 'q2', kind: 'requirements_exploration', text: 'Any constraints?' },
        { id: 'q3', kind: 'disambiguation', text: 'Which meaning?' },
      ]),
    );
    const form = root.querySelector('[data-testid="question-form"]')!;
    expect(form.querySelectorAll('input').length).toBe(3);
    expect(form.querySelectorAll('.kind-badge').length).toBe(3);
    expect(form.textContent).toContain('What is the goal?');
  });

  it('question text is shown verbatim, never truncated', () => {
    const long = 'x'.repeat(500);
    panel.addAssistantTurn(turn([{ id: 'q1', kind: 'disambiguation', text: long }]));
    expect(root.querySelector('.question-text')!.textContent).toBe(long);
  });

  it('submit sends only answered entries', () => {
    panel.addAssistantTurn(
      turn([
        { id: 'q1', kind: 'goal_clarification', text: 'One?' },
        { id: 'q2', kind: 'goal_clarification', text: 'Two?' },
        { id: 'q3', kind: 'goal_clarification', text: 'Three?' },
      ]),
    );
    const form = root.querySelector('form')!;
    const inputs = form.querySelectorAll('input');
    (inputs[1] as HTMLInputElement).value = 'only this one';
    form.dispatchEvent(new Event('submit', { cancelable: true }));
    expect(submitted.length).toBe(1);
    expect(submitted[0]).toEqual([{ question_id: 'q2', question: 'Two?', answer: 'only this one' }]);
  });

  it('zero-question turn renders plain message without a form', () => {
    panel.addAssistantTurn(turn([], 'all set'));
    expect(root.querySelector('[data-testid="question-form"]')).toBeNull();
    expect(root.textContent).toContain('all set');
  });

  it('generate enabled only after a user message and no active job', () => {
    const button = root.querySelector('[data-testid="generate"]') as HTMLButtonElement;
    expect(button.disabled).toBe(true);
    panel.addUserMessage('hello');
    expect(button.disabled).toBe(false);
    panel.setJobActive(true);
    expect(button.disabled).toBe(true);
    panel.setJobActive(false);
    expect(button.disabled).toBe(false);
  });
});

describe('canvas', () => {
  let root: HTMLElement;
  let edits: FlowDoc[];
  let canvas: FlowCanvas;

  beforeEach(() => {
    document.body.innerHTML = '<div id="canvas"></div>';
    root = document.getElementById('canvas')!;
    edits = [];
    canvas = new FlowCanvas(root, { onDocumentEdit: (doc) => edits.push(doc) });
  });

  it('renders the fixture node and edge counts with highlighted variables', () => {
    canvas.render(fixtureFlow());
    expect(root.querySelectorAll('[data-testid="node"]').length).toBe(5);
    expect(root.querySelectorAll('[data-testid="edge"]').length).toBe(4);
    const highlighted = [...root.querySelectorAll('.template-var')].map((el) => el.textContent);
    expect(highlighted).toContain('{persona}');
    expect(highlighted).toContain('{question}');
  });

  it('unknown kind shows the error panel and no canvas', () => {
    const doc = fixtureFlow();
    (doc.nodes[0] as { kind: string }).kind = 'Join';
    canvas.render(doc);
    const panel = root.querySelector('[data-testid="canvas-error"]');
    expect(panel).not.toBeNull();
    expect(panel!.textContent).toContain('nodes[0].kind');
    expect(root.querySelectorAll('[data-testid="node"]').length).toBe(0);
  });

  it('position change produces a document differing only in x/y', () => {
    const original = fixtureFlow();
    canvas.render(original);
    canvas.moveNode('n1', 900, 901);
    expect(edits.length).toBe(1);
    const edited = edits[0];
    const changed = edited.nodes.find((n) => n.id === 'n1')!;
    expect([changed.x, changed.y]).toEqual([900, 901]);
    const normalize = (doc: FlowDoc) =>
      JSON.stringify({ ...doc, nodes: doc.nodes.map((n) => ({ ...n, x: 0, y: 0 })) });
    expect(normalize(edited)).toBe(normalize(original));
  });

  it('deleting a node drops its edges in the edited document', () => {
    canvas.render(fixtureFlow());
    const remove = root.querySelector('[data-node-id="n4"] .node-delete') as HTMLButtonElement;
    remove.click();
    const edited = edits[0];
    expect(edited.nodes.some((n) => n.id === 'n4')).toBe(false);
    expect(edited.edges.some((e) => e.from_node === 'n4' || e.to_node === 'n4')).toBe(false);
  });

  it('palette adds a node of the chosen kind', () => {
    canvas.render(fixtureFlow());
    const buttons = root.querySelectorAll('[data-testid="palette"] button');
    (buttons[0] as HTMLButtonElement).click(); // + TextFields
    expect(edits[0].nodes.length).toBe(6);
    expect(edits[0].nodes[5].kind).toBe('TextFields');
  });

  it('checkFlowDoc reports paths', () => {
    const doc = fixtureFlow();
    delete (doc.nodes[1] as Partial<(typeof doc.nodes)[number]>).title;
    expect(checkFlowDoc(doc)).toContain('nodes[1].title');
  });

  it('templateVariables handles escapes and dedup', () => {
    expect(templateVariables('You are {p}. {p} and {q}')).toEqual(['p', 'q']);
    expect(templateVariables('literal \\{brace\\}')).toEqual([]);
    const fragment = highlightTemplate('hi {name}');
    const div = document.createElement('div');
    div.appendChild(fragment);
    expect(div.querySelector('.template-var')!.textContent).toBe('{name}');
  });
});

describe('stepper', () => {
  it('shows generating progress and marks finished phases', () => {
    document.body.innerHTML = '<div id="s"></div>';
    const stepper = new JobStepper(document.getElementById('s')!);
    const job: JobDoc = {
      id: 'j',
      session_id: 's',
      phase: 'generating',
      current: 2,
      total: 4,
      flow_id: null,
      error: null,
    };
    stepper.render(job);
    const steps = [...document.querySelectorAll('.step')];
    expect(steps.map((s) => s.textContent)).toContain('generating 2/4');
    expect(steps[0].classList.contains('step-done')).toBe(true);
    expect(steps[1].classList.contains('step-active')).toBe(true);
  });

  it('failed job renders the failure banner', () => {
    document.body.innerHTML = '<div id="s"></div>';
    const stepper = new JobStepper(document.getElementById('s')!);
    stepper.render({
      id: 'j',
      session_id: 's',
      phase: 'failed',
      current: 0,
      total: 0,
      flow_id: null,
      error: 'boom',
    });
    const banner = document.querySelector('[data-testid="failure-banner"]')!;
    expect(banner.textContent).toContain('boom');
  });
});

describe('inspector', () => {
  it('groups rows by alternative and model and shows scores', () => {
    document.body.innerHTML = '<div id="i"></div>';
    const inspector = new RunInspector(document.getElementById('i')!);
    const flow = fixtureFlow();
    const mkRow = (model: string, persona: string, text: string) => ({
      instance: {
        final_text: `You are ${persona}. q`,
        model: { provider: 'openai', model },
        bindings: {
          persona: { value: persona, template: persona, source: 'n1' },
          question: { value: 'q', template: 'q', source: 'n2' },
        },
      },
      sample_index: 0,
      text,
    });
    const run: RunDoc = {
      id: 'r',
      flow_id: flow.id,
      status: 'succeeded',
      result: {
        status: 'succeeded',
        failed_node: null,
        responses: {
          n3: [mkRow('gpt-4o', 'a', 'yes'), mkRow('gpt-4o', 'b', 'no'), mkRow('m2', 'a', 'yes')],
        },
        scores: {
          n4: [
            { value: true, response_text: 'yes', model: 'openai/gpt-4o' },
            { value: false, response_text: 'no', model: 'openai/gpt-4o' },
            { value: true, response_text: 'yes', model: 'openai/m2' },
          ],
        },
        tables: { n5: [{ group: 'openai/gpt-4o', value: 0.5, count: 2 }] },
      },
    };
    inspector.render(run, flow);
    expect(document.querySelectorAll('[data-testid="inspector-row"]').length).toBe(3);
    expect(document.querySelectorAll('[data-testid="group-header"]').length).toBeGreaterThan(1);
    const rows = [...document.querySelectorAll('[data-testid="inspector-row"]')];
    expect(rows[0].textContent).toContain('true');
    expect(document.querySelector('[data-testid="vis-summary"]')).not.toBeNull();
  });
});
