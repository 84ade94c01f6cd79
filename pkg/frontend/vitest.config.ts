import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    testTimeout: 300_000, // conformance suites drive a real server process
    hookTimeout: 120_000,
    pool: "forks",
  },
});
