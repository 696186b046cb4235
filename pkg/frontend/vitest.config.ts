import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // The live-loop test builds a demo project and waits for real retrains.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
