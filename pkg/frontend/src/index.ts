export * from "./protocol.js";
export * from "./client.js";
export * from "./viewmodel.js";
export * from "./render.js";
export * from "./app.js";
