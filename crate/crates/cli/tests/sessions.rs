mod common;

use oselect_cli::events::{read_events, EventKind, EventLog};
use oselect_cli::service::{CreateSession, FreeText, NextView, ResponseBody, Service, ServiceError};
use oselect_core::interaction::Answer;
use oselect_core::response_model::ResponseId;

fn create(svc: &Service, who: &str) -> (String, String) {
    let s = svc
        .create_session(CreateSession {
            annotator_id: who.into(),
            unit_id: None,
        })
        .unwrap();
    (s.session_id, s.token)
}

fn open_question(v: &NextView) -> Option<(String, usize)> {
    match v {
        NextView::Question { question, .. } => Some((question.question_id.clone(), question.options[0].id)),
        NextView::Done { .. } => None,
    }
}

fn answer(qid: &str, opt: usize) -> ResponseBody {
    ResponseBody {
        question_id: qid.into(),
        response: Answer::Choice(ResponseId::Option(opt)),
        free_text: FreeText::default(),
        elapsed_ms: 0,
    }
}

/// Answers the first displayed option `n` times (or until done).
fn answer_first(svc: &Service, sid: &str, tok: &str, n: usize) {
    for _ in 0..n {
        let v = svc.next(sid, Some(tok)).unwrap();
        let Some((qid, opt)) = open_question(&v) else { return };
        svc.respond(sid, Some(tok), answer(&qid, opt)).unwrap();
    }
}

#[test]
fn session_ids_and_tokens() {
    let svc = common::memory_service(common::special());
    let (a, ta) = create(&svc, "x");
    let (b, tb) = create(&svc, "y");
    assert_eq!((a.as_str(), b.as_str()), ("s0001", "s0002"));
    assert_ne!(ta, tb);
    assert_eq!(ta.len(), 32);
    assert!(matches!(svc.next(&a, Some(&tb)), Err(ServiceError::BadToken)));
    assert!(matches!(svc.next("s0404", Some(&ta)), Err(ServiceError::UnknownSession(_))));
}

#[test]
fn units_are_assigned_in_rotation() {
    let (corpus, store) = common::corpus();
    let svc = common::memory_service(&(corpus.clone(), store.clone()));
    let units: Vec<String> = (0..corpus.units.len() + 1)
        .map(|i| {
            svc.create_session(CreateSession {
                annotator_id: format!("a{i}"),
                unit_id: None,
            })
            .unwrap()
            .unit_id
        })
        .collect();
    let expected: Vec<String> = corpus
        .units
        .iter()
        .chain(corpus.units.first())
        .map(|u| u.id.clone())
        .collect();
    assert_eq!(units, expected);
}

#[test]
fn free_text_never_moves_posteriors() {
    let plain = common::memory_service(common::special());
    let chatty = common::memory_service(common::special());
    let (s1, t1) = create(&plain, "a");
    let (s2, t2) = create(&chatty, "a");
    loop {
        let v1 = plain.next(&s1, Some(&t1)).unwrap();
        let v2 = chatty.next(&s2, Some(&t2)).unwrap();
        let Some((qid, opt)) = open_question(&v1) else { break };
        assert_eq!(open_question(&v2), Some((qid.clone(), opt)));
        plain.respond(&s1, Some(&t1), answer(&qid, opt)).unwrap();
        let mut body = answer(&qid, opt);
        body.free_text = FreeText {
            ambiguous: Some("the word 'youngest' is ambiguous".into()),
            confusing: Some("why two tables?".into()),
            expected: Some("SELECT name FROM people ORDER BY age DESC LIMIT 1".into()),
        };
        chatty.respond(&s2, Some(&t2), body).unwrap();
    }
    assert_eq!(plain.export(), chatty.export());
    let stored: Vec<_> = chatty.transcripts().into_iter().map(|e| e.response.free_text_confusing).collect();
    assert!(stored.iter().all(|t| t.as_deref() == Some("why two tables?")));
}

#[test]
fn rejected_responses_leave_no_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let (log, history) = EventLog::open(&path).unwrap();
    let svc = common::service_with(common::special(), log, history);
    let (sid, tok) = create(&svc, "a");
    let v = svc.next(&sid, Some(&tok)).unwrap();
    let (qid, opt) = open_question(&v).unwrap();
    assert!(matches!(
        svc.respond(&sid, Some(&tok), answer("tie#0", 0)),
        Err(ServiceError::Stale { .. })
    ));
    assert!(matches!(
        svc.respond(&sid, Some(&tok), answer(&qid, 40)),
        Err(ServiceError::Malformed(_))
    ));
    assert_eq!(read_events(&path).unwrap().len(), 1);
    assert_eq!(svc.next(&sid, Some(&tok)).unwrap(), v);
    svc.respond(&sid, Some(&tok), answer(&qid, opt)).unwrap();
    let events = read_events(&path).unwrap();
    assert_eq!(events.len(), 2);
    assert!(matches!(events[1].kind, EventKind::ResponseRecorded { .. }));
}

#[test]
fn replaying_the_log_restores_every_session() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let (sid_a, tok_a, sid_b, tok_b, export, next_a, next_b, posterior) = {
        let (log, history) = EventLog::open(&path).unwrap();
        let svc = common::service_with(common::special(), log, history);
        let (a, ta) = create(&svc, "alice");
        let (b, tb) = create(&svc, "bob");
        answer_first(&svc, &a, &ta, 1);
        answer_first(&svc, &b, &tb, 2);
        let na = svc.next(&a, Some(&ta)).unwrap();
        let nb = svc.next(&b, Some(&tb)).unwrap();
        let p = svc.posterior("tie").unwrap();
        (a, ta, b, tb, svc.export(), na, nb, p)
    };
    // Simulated crash: a half-written line at the tail.
    use std::io::Write as _;
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"seq\":99,\"sess")
        .unwrap();

    let (log, history) = EventLog::open(&path).unwrap();
    let svc = common::service_with(common::special(), log, history);
    assert_eq!(svc.export(), export);
    assert_eq!(svc.posterior("tie").unwrap(), posterior);
    assert_eq!(svc.next(&sid_a, Some(&tok_a)).unwrap(), next_a);
    assert_eq!(svc.next(&sid_b, Some(&tok_b)).unwrap(), next_b);
    // The restored service keeps numbering and accepting answers.
    let (c, _) = create(&svc, "carol");
    assert_eq!(c, "s0003");
    answer_first(&svc, &sid_a, &tok_a, 1);
}

#[test]
fn posterior_pools_all_annotators() {
    let svc = common::memory_service(common::special());
    let (a, ta) = create(&svc, "a");
    let (b, tb) = create(&svc, "b");
    answer_first(&svc, &a, &ta, 1);
    let one = svc.posterior("tie").unwrap();
    answer_first(&svc, &b, &tb, 1);
    let two = svc.posterior("tie").unwrap();
    assert_eq!((one.responses, two.responses), (1, 2));
    let w = |p: &oselect_cli::service::PosteriorView| p.posterior.iter().map(|x| x.weight).fold(0.0, f64::max);
    assert!(w(&two) >= w(&one));
}
