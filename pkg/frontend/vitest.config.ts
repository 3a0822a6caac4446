import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    // the UI is served by the service binary, so tests share its origin
    environmentOptions: { happyDOM: { url: 'http://127.0.0.1:8931' } },
    include: ['tests/**/*.test.ts'],
    testTimeout: 30000,
    hookTimeout: 90000,
  },
});
