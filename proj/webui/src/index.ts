export * from "./api";
export * from "./gestures";
export * from "./mirror";
export * from "./presence";
export * from "./types";
export * from "./viewstate";
