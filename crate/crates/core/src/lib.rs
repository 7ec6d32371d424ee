//! Interactive robot action planning: a language model drafts a Robot
//! Action Plan, lists what the plan is missing, asks the human about it and
//! revises the plan until nothing is left to ask.

pub mod dialogue;
pub mod eval;
pub mod event;
pub mod llm;
pub mod prompt;
pub mod rap;
pub mod store;
