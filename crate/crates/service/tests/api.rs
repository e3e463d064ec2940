mod common;

use common::{engine_with, golden_world, Server};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use twin_core::narrator::{NarratorError, NarratorRequest, NarratorResponse};
use twin_core::persistence::{load_snapshot, save_snapshot};
use twin_core::run::RunDir;
use twin_core::Narrator;
use twin_service::Service;

struct Down;

impl Narrator for Down {
    fn complete(&self, _: &NarratorRequest) -> Result<NarratorResponse, NarratorError> {
        Err(NarratorError::Unavailable {
            attempts: 4,
            last: "connection refused".into(),
        })
    }
}

async fn get(client: &Client, url: String) -> (StatusCode, Value) {
    let resp = client.get(url).send().await.unwrap();
    (resp.status(), resp.json().await.unwrap())
}

async fn post(client: &Client, url: String, body: Value) -> (StatusCode, Value) {
    let resp = client.post(url).json(&body).send().await.unwrap();
    (resp.status(), resp.json().await.unwrap())
}

#[tokio::test]
async fn health_answers_ok() {
    let server = Server::scripted().await;
    let (status, body) = get(&Client::new(), server.url("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
    server.stop().await.unwrap();
}

#[tokio::test]
async fn summary_has_all_six_sections() {
    let server = Server::scripted().await;
    let (status, body) = get(&Client::new(), server.url("/summary")).await;
    assert_eq!(status, StatusCode::OK);
    for field in [
        "simulation_time",
        "environment",
        "last_narrative_shift",
        "locations",
        "agent_locations",
        "character_descriptions",
    ] {
        assert!(body.get(field).is_some(), "missing {field} in {body}");
    }
    assert_eq!(body["agent_locations"]["Lex"], "Dunes");
    server.stop().await.unwrap();
}

#[tokio::test]
async fn agents_list_names_locations_and_mutations() {
    let server = Server::scripted().await;
    let (status, body) = get(&Client::new(), server.url("/agents")).await;
    assert_eq!(status, StatusCode::OK);
    let agents = body.as_array().unwrap();
    assert_eq!(agents.len(), 2);
    assert_eq!(agents[0]["name"], "Lex");
    assert_eq!(agents[0]["location"], "Dunes");
    assert_eq!(agents[0]["mutation_count"], 0);
    assert!(agents[1]["description"]
        .as_str()
        .unwrap()
        .starts_with("Ground and water-based"));
    server.stop().await.unwrap();
}

#[tokio::test]
async fn dialogue_lifecycle_over_http() {
    let server = Server::scripted().await;
    let client = Client::new();
    let (status, body) = post(&client, server.url("/dialogues"), json!({"agent": "Lex"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap().to_string();

    for text in [
        "Hello Lex.",
        "Is there no way to turn the world around?",
        "Thank you.",
    ] {
        let (status, body) = post(
            &client,
            server.url(&format!("/dialogues/{id}/messages")),
            json!({"text": text}),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert!(!body["reply"].as_str().unwrap().is_empty());
    }

    let (status, body) = post(
        &client,
        server.url(&format!("/dialogues/{id}/conclude")),
        json!({}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["memory_ids"].as_array().unwrap().len(), 1);

    let (status, body) = post(
        &client,
        server.url(&format!("/dialogues/{id}/conclude")),
        json!({}),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "state");

    let (status, body) = post(
        &client,
        server.url(&format!("/dialogues/{id}/messages")),
        json!({"text": "still there?"}),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "state");
    server.stop().await.unwrap();
}

#[tokio::test]
async fn unknown_agents_and_sessions_are_404() {
    let server = Server::scripted().await;
    let client = Client::new();
    let (status, body) = post(&client, server.url("/dialogues"), json!({"agent": "Luna"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not-found");
    assert!(body["message"].as_str().unwrap().contains("Luna"));

    let (status, body) = post(
        &client,
        server.url("/dialogues/d99/messages"),
        json!({"text": "hi"}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not-found");

    let (status, _) = get(&client, server.url("/nowhere")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    server.stop().await.unwrap();
}

#[tokio::test]
async fn bad_bodies_are_400() {
    let server = Server::scripted().await;
    let client = Client::new();
    for body in [
        json!({"ticks": 0}),
        json!({"ticks": -1}),
        json!({"steps": 3}),
    ] {
        let (status, reply) = post(&client, server.url("/control/step"), body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(reply["error"], "validation");
    }
    let (status, body) = post(&client, server.url("/dialogues"), json!({"agent": "Lex"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();
    let (status, reply) = post(
        &client,
        server.url(&format!("/dialogues/{id}/messages")),
        json!({"text": "   "}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(reply["error"], "validation");

    let resp = client
        .post(server.url("/dialogues"))
        .body("not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let reply: Value = resp.json().await.unwrap();
    assert_eq!(reply["error"], "validation");
    let (status, _) = get(&client, server.url("/log?since=-3")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    server.stop().await.unwrap();
}

#[tokio::test]
async fn a_day_of_steps_reports_one_shift() {
    let server = Server::scripted().await;
    let (status, report) = post(
        &Client::new(),
        server.url("/control/step"),
        json!({"ticks": 12}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["tick_index"], 12);
    assert_eq!(report["shift"]["index"], 1);
    assert_eq!(report["sim_time"], "2029-05-19T21:00");
    assert!(report["narrator_calls"].as_u64().unwrap() > 0);
    server.stop().await.unwrap();
}

#[tokio::test]
async fn log_tailing_uses_monotone_cursors() {
    let server = Server::scripted().await;
    let client = Client::new();
    let (_, first) = get(&client, server.url("/log?since=0")).await;
    let lines = first["lines"].as_array().unwrap();
    assert!(lines[0].as_str().unwrap().ends_with("Initialising Gracia."));
    let next = first["next"].as_u64().unwrap();
    assert_eq!(next as usize, lines.len());

    let (_, empty) = get(&client, server.url(&format!("/log?since={next}"))).await;
    assert_eq!(empty["lines"].as_array().unwrap().len(), 0);
    assert_eq!(empty["next"], next);

    post(&client, server.url("/control/step"), json!({"ticks": 1})).await;
    let (_, more) = get(&client, server.url(&format!("/log?since={next}"))).await;
    assert!(more["next"].as_u64().unwrap() > next);
    assert!(!more["lines"].as_array().unwrap().is_empty());

    let (_, all) = get(&client, server.url("/log")).await;
    assert_eq!(all["next"], more["next"]);
    server.stop().await.unwrap();
}

#[tokio::test]
async fn narrator_outage_is_503_and_keeps_the_human_turn() {
    let server = Server::start(Service::start(engine_with(Box::new(Down)), None)).await;
    let client = Client::new();
    let (status, body) = post(&client, server.url("/control/step"), json!({"ticks": 2})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "narrator-unavailable");

    let (_, agents) = get(&client, server.url("/agents")).await;
    assert_eq!(agents[0]["location"], "Dunes");

    let (_, body) = post(
        &client,
        server.url("/dialogues"),
        json!({"agent": "Tortugi"}),
    )
    .await;
    let id = body["session_id"].as_str().unwrap();
    let url = server.url(&format!("/dialogues/{id}/messages"));
    let (status, body) = post(&client, url.clone(), json!({"text": "Are you there?"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "narrator-unavailable");
    let (status, body) = post(&client, url, json!({"text": "Something else"})).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");

    let (_, log) = get(&client, server.url("/log")).await;
    let said = log["lines"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| {
            l.as_str()
                .unwrap()
                .ends_with("Grace said \"Are you there?\"")
        })
        .count();
    assert_eq!(said, 1);
    server.stop().await.unwrap();
}

#[tokio::test]
async fn simultaneous_steps_do_not_interleave() {
    let server = Server::scripted().await;
    let client = Client::new();
    let step = |ticks: u64| {
        let client = client.clone();
        let url = server.url("/control/step");
        async move { post(&client, url, json!({"ticks": ticks})).await }
    };
    let ((s1, a), (s2, b)) = tokio::join!(step(3), step(3));
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    let mut ends = [
        a["tick_index"].as_u64().unwrap(),
        b["tick_index"].as_u64().unwrap(),
    ];
    ends.sort();
    assert_eq!(ends, [3, 6]);

    let (_, log) = get(&client, server.url("/log")).await;
    let log: Vec<&str> = log["lines"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l.as_str().unwrap())
        .collect();
    for report in [&a, &b] {
        let events: Vec<String> = report["events"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| {
                format!(
                    "{}: {}",
                    e["real_time"].as_str().unwrap(),
                    e["text"].as_str().unwrap()
                )
            })
            .collect();
        let found = log
            .windows(events.len())
            .any(|w| w.iter().zip(&events).all(|(l, e)| l == e));
        assert!(
            found,
            "events of tick {} are not contiguous in the log",
            report["tick_index"]
        );
    }
    server.stop().await.unwrap();
}

#[tokio::test]
async fn shutdown_saves_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = dir.path().join("world.json");
    save_snapshot(&golden_world(), &snapshot).unwrap();
    let run = RunDir::new(&snapshot);

    let server = Server::on_disk(run.clone()).await;
    let (status, _) = post(
        &Client::new(),
        server.url("/control/step"),
        json!({"ticks": 2}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    server.stop().await.unwrap();

    let saved = load_snapshot(&snapshot).unwrap();
    assert_eq!(saved.clock.tick_index, 2);
    let log = std::fs::read_to_string(run.log_path()).unwrap();
    assert!(log
        .lines()
        .next()
        .unwrap()
        .ends_with("Initialising Gracia."));
    assert!(run.audit_path().exists());
    assert!(run.datasets_path().join("dataset4.txt").exists());
}
