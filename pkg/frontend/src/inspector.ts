/** Response inspector: one row per model response, grouped by prompt
 * alternative and model, with evaluator scores and Vis bar summaries. */

import type { FlowDoc, RunDoc } from './api.js';

export class RunInspector {
  readonly root: HTMLElement;

  constructor(root: HTMLElement) {
    this.root = root;
    root.classList.add('inspector');
  }

  render(run: RunDoc, flow: FlowDoc): void {
    this.root.innerHTML = '';
    const status = document.createElement('div');
    status.className = `run-status run-${run.status}`;
    status.setAttribute('data-testid', 'run-status');
    status.textContent = `run ${run.status}`;
    this.root.appendChild(status);
    if (!run.result) return;

    const promptNodes = flow.nodes.filter((n) => n.kind === 'Prompt');
    for (const promptNode of promptNodes) {
      const responses = run.result.responses[promptNode.id] ?? [];
      if (!responses.length) continue;
      const scoresByIndex = this.scoresFor(run, flow, promptNode.id);
      const table = document.createElement('table');
      table.className = 'response-table';
      table.setAttribute('data-testid', 'inspector-table');
      table.innerHTML =
        '<thead><tr><th>prompt alternative</th><th>bindings</th><th>model</th>' +
        '<th>response</th><th>score</th></tr></thead>';
      const body = document.createElement('tbody');

      let lastGroup = '';
      responses.forEach((row, index) => {
        const alternative = this.alternativeOf(row);
        const group = `${alternative} @@ ${row.instance.model.provider}/${row.instance.model.model}`;
        if (group !== lastGroup) {
          const header = document.createElement('tr');
          header.className = 'group-header';
          header.setAttribute('data-testid', 'group-header');
          const cell = document.createElement('td');
          cell.colSpan = 5;
          cell.textContent = `${alternative} — ${row.instance.model.provider}/${row.instance.model.model}`;
          header.appendChild(cell);
          body.appendChild(header);
          lastGroup = group;
        }
        const tr = document.createElement('tr');
        tr.setAttribute('data-testid', 'inspector-row');
        const bindings = Object.entries(row.instance.bindings)
          .map(([k, v]) => `${k}=${v.value.slice(0, 40)}`)
          .join(', ');
        const score = scoresByIndex.get(index);
        tr.innerHTML = '';
        for (const text of [
          alternative,
          bindings,
          `${row.instance.model.provider}/${row.instance.model.model}`,
          row.text,
          score === undefined ? '' : String(score),
        ]) {
          const td = document.createElement('td');
          td.textContent = text;
          tr.appendChild(td);
        }
        body.appendChild(tr);
      });
      table.appendChild(body);
      this.root.appendChild(table);
    }

    for (const [nodeId, rows] of Object.entries(run.result.tables)) {
      if (!rows.length) continue;
      const visNode = flow.nodes.find((n) => n.id === nodeId);
      const section = document.createElement('div');
      section.className = 'vis-summary';
      section.setAttribute('data-testid', 'vis-summary');
      const title = document.createElement('h3');
      title.textContent = visNode ? `${visNode.title} (${visNode.payload.metric})` : nodeId;
      section.appendChild(title);
      for (const row of rows) {
        const bar = document.createElement('div');
        bar.className = 'vis-row';
        const label = document.createElement('span');
        label.className = 'vis-label';
        label.textContent = `${row.group} (n=${row.count})`;
        const track = document.createElement('span');
        track.className = 'vis-track';
        const fill = document.createElement('span');
        fill.className = 'vis-fill';
        fill.style.width = `${Math.min(1, Math.max(0, row.value)) * 100}%`;
        const value = document.createElement('span');
        value.className = 'vis-value';
        value.textContent = row.value.toFixed(2);
        track.appendChild(fill);
        bar.append(label, track, value);
        section.appendChild(bar);
      }
      this.root.appendChild(section);
    }
  }

  /** The authored candidate behind the first chained binding, or the raw
   * template when nothing is chained: the axis users compare on. */
  private alternativeOf(row: RunDoc['result'] extends infer _ ? any : never): string {
    const bindings = row.instance.bindings as Record<string, { template: string; value: string }>;
    for (const binding of Object.values(bindings)) {
      if (binding.template !== binding.value) return binding.template;
    }
    return row.instance.final_text.slice(0, 60);
  }

  private scoresFor(run: RunDoc, flow: FlowDoc, promptId: string): Map<number, boolean | number | string> {
    const out = new Map<number, boolean | number | string>();
    if (!run.result) return out;
    const evaluatorIds = flow.edges
      .filter((e) => e.from_node === promptId && e.to_handle === 'responses')
      .map((e) => e.to_node);
    for (const evaluatorId of evaluatorIds) {
      const scores = run.result.scores[evaluatorId] ?? [];
      scores.forEach((score, index) => out.set(index, score.value));
    }
    return out;
  }
}
