//! Text renderings that get embedded into the index.

use crate::types::{ComponentKind, ConversationRecord, Message, SvoaQuadruplet};

/// Renders the SV, SVO or SVOA text of a quadruplet.
///
/// An absent adjunct makes the SVOA rendering identical to the SVO one.
///
/// # Panics
///
/// If `kind` is `Conversation` or `Message`.
pub fn render_component_text(q: &SvoaQuadruplet, kind: ComponentKind) -> String {
    let mut parts: Vec<&str> = vec![q.subject.trim(), q.verb.trim()];
    match kind {
        ComponentKind::SV => {}
        ComponentKind::SVO => parts.push(q.object.trim()),
        ComponentKind::SVOA => {
            parts.push(q.object.trim());
            if let Some(adjunct) = q.adjunct.as_deref() {
                parts.push(adjunct.trim());
            }
        }
        ComponentKind::Conversation | ComponentKind::Message => {
            panic!("render_component_text called with non-semantic kind {kind}")
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

pub fn render_message_text(m: &Message) -> String {
    format!("{}: {}", m.role, m.text)
}

/// `role: text` lines joined by newlines, in message order.
pub fn render_conversation_text(c: &ConversationRecord) -> String {
    render_messages(c.messages())
}

pub(crate) fn render_messages(messages: &[Message]) -> String {
    messages.iter().map(render_message_text).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Turn;

    fn quad(s: &str, v: &str, o: &str, a: Option<&str>) -> SvoaQuadruplet {
        SvoaQuadruplet::new(s, v, o, a.map(str::to_owned), 0)
    }

    #[test]
    fn renders_svoa_with_adjunct() {
        let q = quad("user", "asks", "questions", Some("about climate change"));
        assert_eq!(
            render_component_text(&q, ComponentKind::SVOA),
            "user asks questions about climate change"
        );
    }

    #[test]
    fn svoa_without_adjunct_matches_svo() {
        let q = quad("user", "mentions", "Christmas", None);
        assert_eq!(
            render_component_text(&q, ComponentKind::SVOA),
            "user mentions Christmas"
        );
        assert_eq!(
            render_component_text(&q, ComponentKind::SVOA),
            render_component_text(&q, ComponentKind::SVO)
        );
        let with = quad("user", "mentions", "Christmas", Some("for family"));
        assert_ne!(
            render_component_text(&with, ComponentKind::SVOA),
            render_component_text(&with, ComponentKind::SVO)
        );
    }

    #[test]
    fn renders_sv() {
        let q = quad("assistant", "offers", "advice", Some("regarding data protection"));
        assert_eq!(render_component_text(&q, ComponentKind::SV), "assistant offers");
    }

    #[test]
    fn renders_conversations() {
        let one = ConversationRecord::from_turns("c", vec![Turn::new("user", "hi")]).unwrap();
        assert_eq!(render_conversation_text(&one), "user: hi");
        let two = ConversationRecord::from_turns("c", vec![Turn::new("user", "hi"), Turn::new("assistant", "hello")])
            .unwrap();
        assert_eq!(render_conversation_text(&two), "user: hi\nassistant: hello");
    }
}
