/** Flow canvas: nodes at stored positions, handle-to-handle edges,
 * inline editors. Every edit sends the whole document back via PUT;
 * only position drags update optimistically. */

import type { EdgeDoc, FlowDoc, ModelRefDoc, NodeDoc } from './api.js';

const NODE_KINDS = ['TextFields', 'Prompt', 'CodeEvaluator', 'LLMScorer', 'Vis'] as const;

const NODE_WIDTH = 260;
const HEADER_HEIGHT = 28;

export interface CanvasCallbacks {
  onDocumentEdit(doc: FlowDoc): void;
}

/** Minimal client-side shape check; server remains the authority. */
export function checkFlowDoc(doc: FlowDoc): string | null {
  if (doc.schema_version !== 1) return `$.schema_version: unsupported version ${doc.schema_version}`;
  if (!Array.isArray(doc.nodes)) return '$.nodes: expected a list';
  if (!Array.isArray(doc.edges)) return '$.edges: expected a list';
  for (let i = 0; i < doc.nodes.length; i++) {
    const node = doc.nodes[i];
    if (!NODE_KINDS.includes(node.kind)) return `$.nodes[${i}].kind: unknown node kind '${node.kind}'`;
    for (const key of ['id', 'title', 'x', 'y', 'payload'] as const) {
      if (node[key] === undefined) return `$.nodes[${i}].${key}: missing field`;
    }
  }
  for (let i = 0; i < doc.edges.length; i++) {
    const edge = doc.edges[i];
    for (const key of ['from_node', 'from_handle', 'to_node', 'to_handle'] as const) {
      if (typeof edge[key] !== 'string') return `$.edges[${i}].${key}: missing field`;
    }
  }
  return null;
}

/** Unescaped {name} occurrences, for highlighting template variables. */
export function templateVariables(raw: string): string[] {
  const out: string[] = [];
  const seen = new Set<string>();
  const re = /(?<!\\)\{([^{}]+)\}/g;
  let match: RegExpExecArray | null;
  while ((match = re.exec(raw)) !== null) {
    if (!seen.has(match[1])) {
      seen.add(match[1]);
      out.push(match[1]);
    }
  }
  return out;
}

export function highlightTemplate(raw: string): DocumentFragment {
  const fragment = document.createDocumentFragment();
  const re = /(?<!\\)\{[^{}]+\}/g;
  let last = 0;
  let match: RegExpExecArray | null;
  while ((match = re.exec(raw)) !== null) {
    if (match.index > last) fragment.append(raw.slice(last, match.index));
    const span = document.createElement('span');
    span.className = 'template-var';
    span.textContent = match[0];
    fragment.appendChild(span);
    last = match.index + match[0].length;
  }
  if (last < raw.length) fragment.append(raw.slice(last));
  return fragment;
}

function inputHandles(node: NodeDoc): string[] {
  if (node.kind === 'TextFields') {
    const vars = new Set<string>();
    for (const field of (node.payload.fields as string[]) ?? []) {
      for (const v of templateVariables(field)) vars.add(v);
    }
    return [...vars];
  }
  if (node.kind === 'Prompt') return templateVariables((node.payload.template as string) ?? '');
  return ['responses'];
}

function outputHandle(node: NodeDoc): string | null {
  if (node.kind === 'Vis') return null;
  return node.kind === 'TextFields' ? 'fields' : 'responses';
}

function defaultPayload(kind: NodeDoc['kind']): Record<string, unknown> {
  switch (kind) {
    case 'TextFields':
      return { fields: ['value'] };
    case 'Prompt':
      return {
        template: 'Ask about {topic}',
        models: [{ provider: 'openai', model: 'gpt-4o', temperature: 0.7 }] as ModelRefDoc[],
        samples_per_prompt: 1,
      };
    case 'CodeEvaluator':
      return { language: 'expr', program: 'len(response.text) > 0' };
    case 'LLMScorer':
      return {
        rubric_prompt: 'Is this acceptable? Reply true or false.\n\n{response}',
        judge_model: { provider: 'openai', model: 'gpt-4o', temperature: 0 },
        score_schema: { type: 'boolean', labels: [] },
      };
    case 'Vis':
      return { group_by: 'model', metric: 'pass_rate' };
  }
}

interface DragState {
  nodeId: string;
  startX: number;
  startY: number;
  origX: number;
  origY: number;
}

interface WireState {
  fromNode: string;
  fromHandle: string;
}

export class FlowCanvas {
  readonly root: HTMLElement;
  private doc: FlowDoc | null = null;
  private drag: DragState | null = null;
  private wire: WireState | null = null;

  constructor(root: HTMLElement, private callbacks: CanvasCallbacks) {
    this.root = root;
    root.classList.add('flow-canvas');
    root.addEventListener('mousemove', (e) => this.onMouseMove(e));
    root.addEventListener('mouseup', () => this.onMouseUp());
  }

  get document(): FlowDoc | null {
    return this.doc;
  }

  render(doc: FlowDoc): void {
    const problem = checkFlowDoc(doc);
    this.root.innerHTML = '';
    if (problem) {
      const panel = document.createElement('div');
      panel.className = 'error-panel';
      panel.setAttribute('data-testid', 'canvas-error');
      panel.textContent = `cannot render flow: ${problem}`;
      this.root.appendChild(panel);
      this.doc = null;
      return;
    }
    this.doc = doc;
    this.root.appendChild(this.renderPalette());
    const surface = document.createElement('div');
    surface.className = 'canvas-surface';
    surface.appendChild(this.renderEdges(doc));
    for (const node of doc.nodes) {
      surface.appendChild(this.renderNode(node));
    }
    this.root.appendChild(surface);
  }

  private commit(mutate: (doc: FlowDoc) => void): void {
    if (!this.doc) return;
    const next: FlowDoc = JSON.parse(JSON.stringify(this.doc));
    mutate(next);
    this.callbacks.onDocumentEdit(next);
  }

  private renderPalette(): HTMLElement {
    const palette = document.createElement('div');
    palette.className = 'palette';
    palette.setAttribute('data-testid', 'palette');
    for (const kind of NODE_KINDS) {
      const button = document.createElement('button');
      button.type = 'button';
      button.textContent = `+ ${kind}`;
      button.addEventListener('click', () =>
        this.commit((doc) => {
          const id = `node-${Date.now().toString(36)}-${doc.nodes.length + 1}`;
          doc.nodes.push({
            id,
            kind,
            title: kind.toLowerCase(),
            x: 80 + 40 * (doc.nodes.length % 5),
            y: 60 + 40 * (doc.nodes.length % 7),
            payload: defaultPayload(kind),
          });
        }),
      );
      palette.appendChild(button);
    }
    return palette;
  }

  private handlePosition(nodeId: string, handle: string, side: 'in' | 'out'): { x: number; y: number } {
    const node = this.doc!.nodes.find((n) => n.id === nodeId)!;
    if (side === 'out') return { x: node.x + NODE_WIDTH, y: node.y + HEADER_HEIGHT / 2 };
    const handles = inputHandles(node);
    const index = Math.max(0, handles.indexOf(handle));
    return { x: node.x, y: node.y + HEADER_HEIGHT / 2 + index * 18 };
  }

  private renderEdges(doc: FlowDoc): SVGSVGElement {
    const svg = document.createElementNS('http://www.w3.org/2000/svg', 'svg');
    svg.classList.add('edge-layer');
    for (const edge of doc.edges) {
      if (!doc.nodes.some((n) => n.id === edge.from_node) || !doc.nodes.some((n) => n.id === edge.to_node)) {
        continue;
      }
      const from = this.handlePosition(edge.from_node, edge.from_handle, 'out');
      const to = this.handlePosition(edge.to_node, edge.to_handle, 'in');
      const path = document.createElementNS('http://www.w3.org/2000/svg', 'path');
      const dx = Math.max(40, (to.x - from.x) / 2);
      path.setAttribute(
        'd',
        `M ${from.x} ${from.y} C ${from.x + dx} ${from.y}, ${to.x - dx} ${to.y}, ${to.x} ${to.y}`,
      );
      path.setAttribute('class', 'edge');
      path.setAttribute('data-testid', 'edge');
      path.setAttribute(
        'data-edge',
        `${edge.from_node}.${edge.from_handle}->${edge.to_node}.${edge.to_handle}`,
      );
      svg.appendChild(path);
    }
    return svg;
  }

  private renderNode(node: NodeDoc): HTMLElement {
    const el = document.createElement('div');
    el.className = `node node-${node.kind}`;
    el.setAttribute('data-testid', 'node');
    el.setAttribute('data-node-id', node.id);
    el.style.left = `${node.x}px`;
    el.style.top = `${node.y}px`;
    el.style.width = `${NODE_WIDTH}px`;

    const header = document.createElement('div');
    header.className = 'node-header';
    const title = document.createElement('span');
    title.className = 'node-title';
    title.textContent = `${node.title} · ${node.kind}`;
    const remove = document.createElement('button');
    remove.type = 'button';
    remove.className = 'node-delete';
    remove.textContent = '×';
    remove.addEventListener('click', () =>
      this.commit((doc) => {
        doc.nodes = doc.nodes.filter((n) => n.id !== node.id);
        doc.edges = doc.edges.filter((e) => e.from_node !== node.id && e.to_node !== node.id);
      }),
    );
    header.append(title, remove);
    header.addEventListener('mousedown', (e) => {
      this.drag = { nodeId: node.id, startX: e.clientX, startY: e.clientY, origX: node.x, origY: node.y };
    });
    el.appendChild(header);

    for (const handle of inputHandles(node)) {
      const port = document.createElement('div');
      port.className = 'handle handle-in';
      port.setAttribute('data-handle-in', handle);
      port.textContent = `◦ ${handle}`;
      port.addEventListener('mouseup', () => this.finishWire(node.id, handle));
      el.appendChild(port);
    }
    const out = outputHandle(node);
    if (out) {
      const port = document.createElement('div');
      port.className = 'handle handle-out';
      port.setAttribute('data-handle-out', out);
      port.textContent = `${out} ●`;
      port.addEventListener('mousedown', (e) => {
        e.stopPropagation();
        this.wire = { fromNode: node.id, fromHandle: out };
      });
      el.appendChild(port);
    }

    el.appendChild(this.renderBody(node));
    return el;
  }

  private finishWire(toNode: string, toHandle: string): void {
    if (!this.wire) return;
    const { fromNode, fromHandle } = this.wire;
    this.wire = null;
    if (fromNode === toNode) return;
    this.commit((doc) => {
      const edge: EdgeDoc = { from_node: fromNode, from_handle: fromHandle, to_node: toNode, to_handle: toHandle };
      doc.edges = doc.edges.filter((e) => !(e.to_node === toNode && e.to_handle === toHandle));
      doc.edges.push(edge);
    });
  }

  private renderBody(node: NodeDoc): HTMLElement {
    const body = document.createElement('div');
    body.className = 'node-body';
    switch (node.kind) {
      case 'TextFields':
        this.renderTextFieldsBody(body, node);
        break;
      case 'Prompt':
        this.renderPromptBody(body, node);
        break;
      case 'CodeEvaluator':
        this.renderProgramBody(body, node, 'program');
        break;
      case 'LLMScorer':
        this.renderProgramBody(body, node, 'rubric_prompt');
        break;
      case 'Vis':
        this.renderVisBody(body, node);
        break;
    }
    return body;
  }

  private renderTextFieldsBody(body: HTMLElement, node: NodeDoc): void {
    const fields = (node.payload.fields as string[]) ?? [];
    fields.forEach((value, index) => {
      const row = document.createElement('div');
      row.className = 'field-row';
      const area = document.createElement('textarea');
      area.value = value;
      area.rows = 2;
      area.addEventListener('change', () =>
        this.commit((doc) => {
          const target = doc.nodes.find((n) => n.id === node.id)!;
          (target.payload.fields as string[])[index] = area.value;
        }),
      );
      const drop = document.createElement('button');
      drop.type = 'button';
      drop.textContent = '−';
      drop.addEventListener('click', () =>
        this.commit((doc) => {
          const target = doc.nodes.find((n) => n.id === node.id)!;
          (target.payload.fields as string[]).splice(index, 1);
        }),
      );
      row.append(area, drop);
      body.appendChild(row);
    });
    const add = document.createElement('button');
    add.type = 'button';
    add.textContent = '+ value';
    add.addEventListener('click', () =>
      this.commit((doc) => {
        const target = doc.nodes.find((n) => n.id === node.id)!;
        (target.payload.fields as string[]).push('');
      }),
    );
    body.appendChild(add);
  }

  private renderPromptBody(body: HTMLElement, node: NodeDoc): void {
    const preview = document.createElement('div');
    preview.className = 'template-preview';
    preview.appendChild(highlightTemplate((node.payload.template as string) ?? ''));
    const area = document.createElement('textarea');
    area.value = (node.payload.template as string) ?? '';
    area.rows = 3;
    area.addEventListener('change', () =>
      this.commit((doc) => {
        const target = doc.nodes.find((n) => n.id === node.id)!;
        target.payload.template = area.value;
      }),
    );
    const models = document.createElement('div');
    models.className = 'model-list';
    for (const m of (node.payload.models as ModelRefDoc[]) ?? []) {
      const chip = document.createElement('span');
      chip.className = 'model-chip';
      chip.textContent = `${m.provider}/${m.model}`;
      models.appendChild(chip);
    }
    body.append(preview, area, models);
  }

  private renderProgramBody(body: HTMLElement, node: NodeDoc, key: 'program' | 'rubric_prompt'): void {
    const area = document.createElement('textarea');
    area.value = (node.payload[key] as string) ?? '';
    area.rows = 4;
    area.className = 'program-editor';
    area.addEventListener('change', () =>
      this.commit((doc) => {
        const target = doc.nodes.find((n) => n.id === node.id)!;
        target.payload[key] = area.value;
      }),
    );
    body.appendChild(area);
  }

  private renderVisBody(body: HTMLElement, node: NodeDoc): void {
    const metric = document.createElement('select');
    for (const option of ['pass_rate', 'mean', 'count']) {
      const el = document.createElement('option');
      el.value = option;
      el.textContent = option;
      el.selected = node.payload.metric === option;
      metric.appendChild(el);
    }
    metric.addEventListener('change', () =>
      this.commit((doc) => {
        const target = doc.nodes.find((n) => n.id === node.id)!;
        target.payload.metric = metric.value;
      }),
    );
    const label = document.createElement('div');
    label.textContent = `group by: ${node.payload.group_by}`;
    body.append(label, metric);
  }

  private onMouseMove(e: MouseEvent): void {
    if (!this.drag || !this.doc) return;
    const node = this.doc.nodes.find((n) => n.id === this.drag!.nodeId);
    if (!node) return;
    node.x = this.drag.origX + (e.clientX - this.drag.startX);
    node.y = this.drag.origY + (e.clientY - this.drag.startY);
    const el = this.root.querySelector(`[data-node-id="${node.id}"]`) as HTMLElement | null;
    if (el) {
      el.style.left = `${node.x}px`;
      el.style.top = `${node.y}px`;
    }
  }

  private onMouseUp(): void {
    if (this.drag && this.doc) {
      // optimistic while dragging; persist the final position
      this.callbacks.onDocumentEdit(JSON.parse(JSON.stringify(this.doc)));
    }
    this.drag = null;
    this.wire = null;
  }

  /** Programmatic position edit used by tests and keyboard nudging. */
  moveNode(nodeId: string, x: number, y: number): void {
    this.commit((doc) => {
      const node = doc.nodes.find((n) => n.id === nodeId);
      if (node) {
        node.x = x;
        node.y = y;
      }
    });
  }
}
