/** Generation progress stepper, fed by polling GET /jobs/{id}. */

import type { ApiClient, JobDoc } from './api.js';

const PHASES = ['planning', 'generating', 'connecting', 'reviewing', 'done'] as const;

export class JobStepper {
  readonly root: HTMLElement;

  constructor(root: HTMLElement) {
    this.root = root;
    root.classList.add('stepper');
  }

  render(job: JobDoc | null): void {
    this.root.innerHTML = '';
    if (job === null) return;
    if (job.phase === 'failed') {
      const banner = document.createElement('div');
      banner.className = 'failure-banner';
      banner.setAttribute('data-testid', 'failure-banner');
      banner.textContent = `generation failed: ${job.error ?? 'unknown error'}`;
      this.root.appendChild(banner);
      return;
    }
    const reached = PHASES.indexOf(job.phase as (typeof PHASES)[number]);
    for (const [index, phase] of PHASES.entries()) {
      const step = document.createElement('span');
      step.className = 'step';
      step.setAttribute('data-phase', phase);
      if (index < reached || job.phase === 'done') step.classList.add('step-done');
      if (index === reached && job.phase !== 'done') step.classList.add('step-active');
      step.textContent =
        phase === 'generating' && job.phase === 'generating' && job.total > 0
          ? `generating ${job.current}/${job.total}`
          : phase;
      this.root.appendChild(step);
    }
  }

  /** Poll until the job reaches done or failed; renders each snapshot. */
  async track(api: ApiClient, jobId: string, pollMs = 500): Promise<JobDoc> {
    for (;;) {
      const job = await api.getJob(jobId);
      this.render(job);
      if (job.phase === 'done' || job.phase === 'failed') return job;
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }
}
