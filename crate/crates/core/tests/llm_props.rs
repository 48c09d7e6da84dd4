use std::collections::BTreeMap;

use proptest::prelude::*;

use blockloop::llm::mock::ScriptedClient;
use blockloop::llm::{
    parse_structured_reply, render_reply, self_verify, ChatMessage, ReplyKind, ReplyPayload, SamplingParams,
    StructuredReply,
};
use blockloop::plan::{render_plan, PlanAst};
use blockloop::world::{BlockId, Pose2D};

fn block() -> impl Strategy<Value = BlockId> {
    prop::sample::select(BlockId::all().collect::<Vec<_>>())
}

fn coord() -> impl Strategy<Value = f64> {
    (0u32..=100).prop_map(|v| v as f64 / 100.0)
}

fn prose() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,8}\\."
}

fn plan_payload() -> impl Strategy<Value = ReplyPayload> {
    prop_oneof![
        block().prop_map(|block| PlanAst::Approach { block }),
        (block(), coord(), coord()).prop_map(|(block, x, y)| PlanAst::MoveTo { block, target: Pose2D::new(x, y) }),
        Just(PlanAst::Done),
    ]
    .prop_map(|plan| ReplyPayload::Plan { text: render_plan(&plan), plan })
}

fn positions_payload() -> impl Strategy<Value = ReplyPayload> {
    prop::collection::btree_map(block(), (coord(), coord()), 1..8).prop_map(|m| {
        ReplyPayload::Positions(m.into_iter().map(|(id, (x, y))| (id, Pose2D::new(x, y))).collect::<BTreeMap<_, _>>())
    })
}

proptest! {
    #[test]
    fn rendered_replies_parse_back(description in prose(), explain in prose(), payload in prop_oneof![plan_payload(), positions_payload()]) {
        let kind = match payload {
            ReplyPayload::Plan { .. } => ReplyKind::Plan,
            ReplyPayload::Positions(_) => ReplyKind::Positions,
        };
        let reply = StructuredReply { description, explain, payload };
        prop_assert_eq!(parse_structured_reply(&render_reply(&reply), kind), Ok(reply));
    }

    #[test]
    fn verification_costs_one_request(second_ok in any::<bool>(), history in 0usize..4) {
        let first = "<Description>a</Description><Explain>b</Explain><Plan>done</Plan>";
        let second = if second_ok { "<Description>c</Description><Explain>d</Explain><Plan>move your arm close to the red moon</Plan>" } else { "not sure" };
        let client = ScriptedClient::new([second]);
        let mut convo: Vec<ChatMessage> = (0..history).map(|i| ChatMessage::user(format!("turn {i}"))).collect();
        convo.push(ChatMessage::assistant(first));
        let v = self_verify(&client, "m", &convo, ReplyKind::Plan, &SamplingParams::default()).unwrap();
        prop_assert_eq!(client.request_count(), 1);
        prop_assert_eq!(v.fallback_used, !second_ok);
        prop_assert_eq!(v.transcript.len(), convo.len() + 2);
        let expected = if second_ok { v.second.as_ref().unwrap() } else { &v.first };
        prop_assert_eq!(v.final_reply(), expected);
    }
}
