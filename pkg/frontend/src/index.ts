export * from "./wire.js";
export * from "./tokens.js";
export * from "./client.js";
export * from "./editor.js";
export * from "./render.js";
