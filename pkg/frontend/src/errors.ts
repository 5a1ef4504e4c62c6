export class DecodeError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DecodeError";
  }
}

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

export class CorruptionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "CorruptionError";
  }
}

export class ClosedHandleError extends Error {
  constructor(message = "cache handle is closed") {
    super(message);
    this.name = "ClosedHandleError";
  }
}
