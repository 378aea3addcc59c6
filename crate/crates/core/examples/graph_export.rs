//! Exports the featurized kernel graph of a request as JSON or Graphviz DOT.
//!
//! ```text
//! cargo run --example graph_export -- [arch=mixtral-8x7b] [gpus=4] [json|dot] > layer.dot
//! ```

use infercarbon::arch::{ArchCatalog, InferenceConfig};
use infercarbon::graph::{export_raw, extract_point, GraphDocument, GraphFormat};
use infercarbon::roofline::GpuCatalog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let archs = ArchCatalog::builtin();
    let arch = archs.get(args.first().map_or("mixtral-8x7b", String::as_str))?;
    let gpus: u64 = args.get(1).map_or(Ok(4), |s| s.parse())?;
    let format: GraphFormat = args.get(2).map_or("dot", String::as_str).parse()?;
    let catalog = GpuCatalog::builtin();

    let raw = extract_point(arch, &InferenceConfig::new(1, 512, 64, gpus), catalog.get("A100")?)?;
    let text = export_raw(&raw, format)?;
    if format == GraphFormat::Json {
        // The document parses back into the same records.
        let doc = GraphDocument::parse(&text)?;
        assert_eq!(doc.nodes, raw.nodes);
        eprintln!("{} nodes, {} edges", doc.nodes.len(), doc.edges.len());
    }
    println!("{text}");
    Ok(())
}
