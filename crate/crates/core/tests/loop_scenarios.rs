use std::sync::Arc;

use clarify_core::dialogue::{
    run_to_completion, start_session, verify_phase_walk, AnswerSet, AnswerText, DialogueError,
    LoopPhase, QueuedAnswers, RefuseAll, SessionConfig, SessionStatus, REFUSAL_TEXT,
};
use clarify_core::event::EventKind;
use clarify_core::llm::{ChatBackend, Role, Script, ScriptEntry, ScriptedBackend};
use clarify_core::prompt::PromptBundle;

const RAP_A: &str = r#"[{"ACTION":"MOVE","OBJECT":"NONE","ROBOT_POSITION":"KITCHEN","GRIPPER_L":"NONE","GRIPPER_R":"NONE"}]"#;
const RAP_B: &str = r#"[{"ACTION":"MOVE","OBJECT":"NONE","ROBOT_POSITION":"KITCHEN","GRIPPER_L":"NONE","GRIPPER_R":"NONE"},
 {"ACTION":"GRAB","OBJECT":"EGG","ROBOT_POSITION":"KITCHEN","GRIPPER_L":"NONE","GRIPPER_R":"EGG","TIME":"3 MINUTES"}]"#;

fn bundle() -> Arc<PromptBundle> {
    Arc::new(PromptBundle::defaults())
}

fn config(max: u32) -> SessionConfig {
    SessionConfig {
        max_iterations: max,
        ..SessionConfig::default()
    }
}

#[test]
fn immediate_none_is_one_iteration() {
    let backend = ScriptedBackend::from_responses([RAP_A, "none"]);
    let mut s = start_session("Make scrambled egg.", config(10), bundle()).unwrap();
    let r = run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap();
    assert_eq!(r.status, SessionStatus::Done);
    assert_eq!(r.metrics.iterations, 1);
    assert_eq!(r.metrics.questions_total, 0);
    assert_eq!(r.metrics.question_turns, 0);
    assert_eq!(r.final_rap.unwrap().len(), 1);
    verify_phase_walk(s.events()).unwrap();
}

#[test]
fn one_question_round_then_none() {
    let backend = ScriptedBackend::from_responses([
        RAP_A,
        "1. Egg location\n2. Cooking time",
        "1. Where are the eggs?\n2. How long should they cook?",
        RAP_B,
        "none",
    ]);
    let mut s = start_session("Make scrambled egg.", config(10), bundle()).unwrap();
    let mut answers = QueuedAnswers::new([AnswerSet::new(vec![
        clarify_core::dialogue::Answer {
            question_id: "q1".into(),
            text: AnswerText::Text("In the refrigerator.".into()),
        },
        clarify_core::dialogue::Answer {
            question_id: "q2".into(),
            text: AnswerText::Refused,
        },
    ])]);
    let r = run_to_completion(&mut s, &backend, &mut answers, &mut ()).unwrap();
    assert_eq!(r.metrics.iterations, 2);
    assert_eq!(r.metrics.question_turns, 1);
    assert_eq!(r.metrics.questions_total, 2);
    assert_eq!(s.rap_versions().len(), 2);
    assert_eq!(s.rap_versions()[1].revision, 2);

    // The revision request carries the whole conversation and the answers.
    let requests = backend.requests();
    assert_eq!(requests.len(), 5);
    let fourth = &requests[3];
    assert_eq!(fourth[0].role, Role::System);
    assert_eq!(fourth.len(), 1 + 7 + 1);
    let answers_msg = &fourth[7];
    assert_eq!(answers_msg.role, Role::User);
    assert!(answers_msg.content.contains("In the refrigerator."));
    assert!(answers_msg.content.contains(REFUSAL_TEXT));
    assert!(answers_msg.content.contains("Where are the eggs?"));
}

#[test]
fn question_phase_none_finishes() {
    let backend = ScriptedBackend::from_responses([RAP_A, "1. Maybe the time", "none"]);
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    let r = run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap();
    assert_eq!(r.status, SessionStatus::Done);
    assert_eq!(r.metrics.iterations, 1);
    assert_eq!(r.metrics.questions_total, 0);
}

#[test]
fn iteration_cap_truncates() {
    let mut responses = Vec::new();
    for _ in 0..3 {
        responses.extend([RAP_A, "1. Still unclear", "1. Where?"]);
    }
    let backend = ScriptedBackend::from_responses(responses);
    let mut s = start_session("Cut carrots.", config(3), bundle()).unwrap();
    let r = run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap();
    assert_eq!(r.status, SessionStatus::Truncated);
    assert_eq!(s.rap_versions().len(), 3);
    assert_eq!(r.metrics.question_turns, 2);
    assert!(r.final_rap.is_some());
    // The question phase of the last iteration is never reached.
    assert_eq!(backend.remaining(), 1);
    verify_phase_walk(s.events()).unwrap();
}

#[test]
fn malformed_rap_is_repaired_once() {
    let backend = ScriptedBackend::from_responses(["I will now think.", RAP_A, "none"]);
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    let r = run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap();
    assert_eq!(r.status, SessionStatus::Done);
    assert_eq!(s.rap_versions().len(), 1);
    let errors: Vec<_> = s.events().iter().filter(|e| e.kind == EventKind::Error).collect();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].payload["kind"], "malformed_rap");
    let repair = &backend.requests()[1];
    assert!(repair.last().unwrap().content.contains("could not be read"));
    verify_phase_walk(s.events()).unwrap();
}

#[test]
fn repair_exhaustion_is_reported() {
    let backend = ScriptedBackend::from_responses(["no json", "still none"]);
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    let err = run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap_err();
    assert!(matches!(err, DialogueError::RepairExhausted { attempts: 1, .. }));
    assert_eq!(s.phase(), LoopPhase::MakeRap);
    verify_phase_walk(s.events()).unwrap();
}

#[test]
fn backend_failure_keeps_phase() {
    let backend = ScriptedBackend::new(Script::new(vec![ScriptEntry::Fail("timeout".into())]));
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    let err = s.advance(&backend).unwrap_err();
    assert!(matches!(err, DialogueError::BackendFailure(_)));
    assert_eq!(s.phase(), LoopPhase::MakeRap);
    assert_eq!(s.last_error().as_deref(), Some("timeout"));
    assert!(backend.is_deterministic());
}

#[test]
fn answers_are_checked() {
    let backend = ScriptedBackend::from_responses([RAP_A, "1. x", "1. Where?\n2. When?"]);
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    for _ in 0..3 {
        s.advance(&backend).unwrap();
    }
    assert_eq!(s.phase(), LoopPhase::AwaitAnswers);
    assert!(matches!(s.advance(&backend), Err(DialogueError::IllegalPhase(_))));

    let mut partial = AnswerSet::default();
    partial.push("q1", AnswerText::Text("here".into()));
    match s.submit_answers(partial.clone()) {
        Err(DialogueError::MissingAnswer(ids)) => assert_eq!(ids, vec!["q2".to_string()]),
        other => panic!("{other:?}"),
    }
    let mut unknown = partial.clone();
    unknown.push("q9", AnswerText::Refused);
    assert!(matches!(s.submit_answers(unknown), Err(DialogueError::UnknownQuestionId(_))));
    let mut dup = partial.clone();
    dup.push("q1", AnswerText::Refused);
    assert!(matches!(s.submit_answers(dup), Err(DialogueError::DuplicateAnswer(_))));

    partial.push("q2", AnswerText::Refused);
    s.submit_answers(partial).unwrap();
    assert_eq!(s.phase(), LoopPhase::MakeRap);
    assert_eq!(s.iteration(), 2);
}

#[test]
fn empty_command_rejected() {
    assert!(matches!(
        start_session("   ", config(10), bundle()),
        Err(DialogueError::EmptyCommand)
    ));
    assert!(matches!(
        start_session("x", config(0), bundle()),
        Err(DialogueError::InvalidConfig(_))
    ));
}

#[test]
fn question_ids_are_session_wide() {
    let backend = ScriptedBackend::from_responses([
        RAP_A, "1. a", "1. Where?\n2. When?", RAP_A, "1. b", "1. How many?", RAP_B, "none",
    ]);
    let mut s = start_session("Cut carrots.", config(10), bundle()).unwrap();
    run_to_completion(&mut s, &backend, &mut RefuseAll, &mut ()).unwrap();
    let ids: Vec<String> = s
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::AnswersSubmitted)
        .flat_map(|e| {
            e.payload["answers"]["answers"]
                .as_array()
                .unwrap()
                .iter()
                .map(|a| a["question_id"].as_str().unwrap().to_string())
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(ids, vec!["q1", "q2", "q3"]);
}
