import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // the round-trip suite boots the real rating service in a subprocess
    hookTimeout: 60_000,
    testTimeout: 30_000,
  },
});
